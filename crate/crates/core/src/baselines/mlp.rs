//! Feed-forward classifier over the raw features of a transaction and its
//! two parties. It sees no graph structure.

use std::io::{Read, Write};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::ScoredExample;
use crate::graph::{BipartiteGraph, Direction, RawTransaction};
use crate::model::{Bound, ModelError, ParamId, ParamStore};
use crate::ndtensor::{read_f64, read_u32, read_u64, BatchStats, Mode, RunningStats, Tape, Tensor, Var};
use crate::training::{heldout_pairs, Adam, EpochRecord, TrainingError};

pub const MLP_MAGIC: &[u8; 4] = b"AMLM";
pub const MLP_VERSION: u32 = 1;
const MLP_SALT: u64 = 0x6d6c_7000_0000_0003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Layer widths, the last of which must be 1.
    pub dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of transactions held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            dims: vec![128, 64, 32, 16, 1],
            dropout: 0.1,
            learning_rate: 0.01,
            batch_size: 512,
            max_epochs: 50,
            patience: 6,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::Config(m.into()));
        if self.dims.last() != Some(&1) || self.dims.contains(&0) {
            return bad("mlp dims must be positive and end in 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("mlp dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || self.batch_size < 2 || self.max_epochs == 0 {
            return bad("mlp learning_rate, batch_size (>= 2) and max_epochs must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("mlp validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
    /// gamma, beta and running-stat slot for hidden layers
    norm: Option<(ParamId, ParamId, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    d_c: usize,
    d_t: usize,
    dims: Vec<usize>,
    dropout: f64,
    params: ParamStore,
    layers: Vec<Dense>,
    running: Vec<RunningStats>,
}

/// One `(source, destination, transaction)` example; `None` marks an external side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub source: Option<usize>,
    pub dest: Option<usize>,
    pub txn: usize,
}

impl Mlp {
    pub fn new(d_c: usize, d_t: usize, dims: &[usize], dropout: f64, seed: u64) -> Result<Self, ModelError> {
        if dims.last() != Some(&1) || dims.contains(&0) {
            return Err(ModelError::Config("mlp dims must be positive and end in 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut running = Vec::new();
        let mut d_in = 2 * d_c + d_t;
        for (l, &d_out) in dims.iter().enumerate() {
            let w = params.add_uniform(format!("mlp{l}.w"), d_in, d_out, d_in, d_out, &mut rng);
            let b = params.add(format!("mlp{l}.b"), Tensor::zeros(&[1, d_out]));
            let norm = (l + 1 < dims.len()).then(|| {
                let g = params.add(format!("mlp{l}.gamma"), Tensor::full(&[1, d_out], 1.0));
                let be = params.add(format!("mlp{l}.beta"), Tensor::zeros(&[1, d_out]));
                running.push(RunningStats::new(d_out));
                (g, be, running.len() - 1)
            });
            layers.push(Dense { w, b, norm });
            d_in = d_out;
        }
        Ok(Self {
            d_c,
            d_t,
            dims: dims.to_vec(),
            dropout,
            params,
            layers,
            running,
        })
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.d_c, self.d_t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `src || dst || txn`, with zeros for an external side.
    pub fn input_row(&self, src: Option<&[f64]>, dst: Option<&[f64]>, txn: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut row = Vec::with_capacity(2 * self.d_c + self.d_t);
        for side in [src, dst] {
            match side {
                Some(x) if x.len() == self.d_c => row.extend_from_slice(x),
                Some(x) => {
                    return Err(ModelError::Dimension(format!(
                        "customer features have width {}, expected {}",
                        x.len(),
                        self.d_c
                    )))
                }
                None => row.extend(std::iter::repeat_n(0.0, self.d_c)),
            }
        }
        if txn.len() != self.d_t {
            return Err(ModelError::Dimension(format!(
                "transaction features have width {}, expected {}",
                txn.len(),
                self.d_t
            )));
        }
        row.extend_from_slice(txn);
        Ok(row)
    }

    pub fn inputs(&self, graph: &BipartiteGraph, triples: &[Triple]) -> Result<Tensor, ModelError> {
        let mut data = Vec::with_capacity(triples.len() * (2 * self.d_c + self.d_t));
        for t in triples {
            data.extend(self.input_row(
                t.source.map(|c| graph.customer_features().row(c)),
                t.dest.map(|c| graph.customer_features().row(c)),
                graph.txn_features().row(t.txn),
            )?);
        }
        Ok(Tensor::matrix(triples.len(), 2 * self.d_c + self.d_t, data)?)
    }

    /// Predictions `[n x 1]` for stacked input rows.
    pub fn forward(
        &self,
        tape: &Tape,
        bound: &Bound,
        x: Var,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(Var, Vec<(usize, BatchStats)>), ModelError> {
        if tape.value(x).cols() != 2 * self.d_c + self.d_t {
            return Err(ModelError::Dimension(format!(
                "mlp input has width {}, expected {}",
                tape.value(x).cols(),
                2 * self.d_c + self.d_t
            )));
        }
        let mut h = x;
        let mut updates = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            h = tape.add_row(tape.matmul(h, bound.var(layer.w))?, bound.var(layer.b))?;
            if let Some((g, b, slot)) = layer.norm {
                h = tape.relu(h)?;
                let (y, stats) = tape.batch_norm(h, bound.var(g), bound.var(b), &self.running[slot], mode)?;
                updates.extend(stats.map(|s| (slot, s)));
                h = tape.dropout(y, self.dropout, dropout_seed.wrapping_add(l as u64), mode)?;
            }
        }
        Ok((tape.sigmoid(h)?, updates))
    }

    pub fn predict_rows(&self, x: Tensor) -> Result<Vec<f64>, ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind_constant(&tape);
        let (y, _) = self.forward(&tape, &bound, tape.constant(x), Mode::Eval, 0)?;
        let out = tape.value(y).data().to_vec();
        Ok(out)
    }

    /// Inference-mode link probability of one example.
    pub fn predict(&self, src: Option<&[f64]>, dst: Option<&[f64]>, txn: &[f64]) -> Result<f64, ModelError> {
        let row = self.input_row(src, dst, txn)?;
        let n = row.len();
        Ok(self.predict_rows(Tensor::matrix(1, n, row)?)?[0])
    }

    fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (slot, s) in stats {
            self.running[*slot].update(s);
        }
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        w.write_all(MLP_MAGIC)?;
        w.write_all(&MLP_VERSION.to_le_bytes())?;
        for v in [self.d_c, self.d_t, self.dims.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.dropout.to_le_bytes())?;
        for t in self.params.values() {
            t.write_to(w)?;
        }
        for s in &self.running {
            Tensor::vector(s.mean.clone()).write_to(w)?;
            Tensor::vector(s.var.clone()).write_to(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MLP_MAGIC {
            return Err(ModelError::Format("not an mlp checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != MLP_VERSION {
            return Err(ModelError::Format(format!("unsupported mlp checkpoint version {version}")));
        }
        let d_c = read_u64(r)? as usize;
        let d_t = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        if n > 64 {
            return Err(ModelError::Format(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let dropout = read_f64(r)?;
        let mut mlp = Mlp::new(d_c, d_t, &dims, dropout, 0)?;
        for id in mlp.params.ids().collect::<Vec<_>>() {
            let t = Tensor::read_from(r)?;
            if t.shape() != mlp.params.get(id).shape() {
                return Err(ModelError::Format(format!("tensor {} has the wrong shape", mlp.params.name(id))));
            }
            *mlp.params.get_mut(id) = t;
        }
        for s in &mut mlp.running {
            let mean = Tensor::read_from(r)?.into_data();
            let var = Tensor::read_from(r)?.into_data();
            if mean.len() != s.mean.len() || var.len() != s.var.len() {
                return Err(ModelError::Format("batch-norm state width mismatch".into()));
            }
            *s = RunningStats { mean, var };
        }
        Ok(mlp)
    }
}

/// Positives are the graph's transactions. Each negative pairs a random
/// transaction with a source and a destination drawn independently from the
/// observed sources and destinations, so external sides keep their rate.
pub fn mlp_dataset(graph: &BipartiteGraph, seed: u64) -> (Vec<Triple>, Vec<Triple>) {
    let n = graph.n_transactions();
    let positives: Vec<Triple> = (0..n)
        .map(|t| Triple {
            source: graph.txn_source(t),
            dest: graph.txn_dest(t),
            txn: t,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = (0..n)
        .map(|_| Triple {
            source: graph.txn_source(rng.random_range(0..n)),
            dest: graph.txn_dest(rng.random_range(0..n)),
            txn: rng.random_range(0..n),
        })
        .collect();
    (positives, negatives)
}

pub struct MlpFit {
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn labelled(pos: &[Triple], neg: &[Triple]) -> Vec<(Triple, f64)> {
    pos.iter().map(|&t| (t, 1.0)).chain(neg.iter().map(|&t| (t, 0.0))).collect()
}

fn mean_bce(mlp: &Mlp, graph: &BipartiteGraph, examples: &[(Triple, f64)]) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    for chunk in examples.chunks(4096) {
        let triples: Vec<Triple> = chunk.iter().map(|e| e.0).collect();
        let tape = Tape::new();
        let bound = mlp.params.bind_constant(&tape);
        let x = tape.constant(mlp.inputs(graph, &triples)?);
        let (y, _) = mlp.forward(&tape, &bound, x, Mode::Eval, 0)?;
        let loss = tape.bce_sum(y, Rc::new(chunk.iter().map(|e| e.1).collect()))?;
        total += tape.item(loss);
    }
    Ok(total / examples.len() as f64)
}

/// Trains on a balanced dataset built from `graph`, with early stopping on
/// a held-out share of it.
pub fn mlp_fit(graph: &BipartiteGraph, config: &MlpConfig) -> Result<MlpFit, TrainingError> {
    config.validate()?;
    let (pos, neg) = mlp_dataset(graph, config.seed ^ MLP_SALT);
    let mut examples = labelled(&pos, &neg);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ MLP_SALT.rotate_left(17));
    examples.shuffle(&mut rng);
    let n_val = ((examples.len() as f64) * config.validation_fraction).round() as usize;
    if n_val == 0 || n_val >= examples.len() {
        return Err(TrainingError::Data("too few transactions to train the mlp".into()));
    }
    let (val, train) = examples.split_at(n_val);
    let mut train = train.to_vec();

    let mut mlp = Mlp::new(graph.customer_dim(), graph.txn_dim(), &config.dims, config.dropout, config.seed)?;
    let mut adam = Adam::new(&mlp.params, config.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        train.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        // batch norm needs two rows, so a trailing single example waits for the next epoch
        for (step, chunk) in train.chunks(config.batch_size).filter(|c| c.len() >= 2).enumerate() {
            let triples: Vec<Triple> = chunk.iter().map(|e| e.0).collect();
            let tape = Tape::new();
            let bound = mlp.params.bind(&tape);
            let x = tape.constant(mlp.inputs(graph, &triples)?);
            let (y, stats) = mlp
                .forward(&tape, &bound, x, Mode::Train, rng.random())
                .map_err(|e| TrainingError::from(e).locate(epoch, step))?;
            let loss = tape.bce(y, Rc::new(chunk.iter().map(|e| e.1).collect()))?;
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(TrainingError::NonFinite(format!("mlp loss at epoch {epoch}, step {step}")));
            }
            let mut grads = tape.backward(loss).map_err(|e| TrainingError::from(e).locate(epoch, step))?;
            let g: Vec<_> = mlp.params.ids().map(|id| grads.take(bound.var(id))).collect();
            adam.step(&mut mlp.params, &g);
            mlp.apply_batch_stats(&stats);
            sum += value * chunk.len() as f64;
            count += chunk.len();
        }
        let val_loss = mean_bce(&mlp, graph, val)?;
        if !val_loss.is_finite() {
            return Err(TrainingError::NonFinite(format!("mlp validation loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: sum / count.max(1) as f64,
            val_loss,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, mlp.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch runs");
    Ok(MlpFit {
        model,
        history,
        best_epoch,
    })
}

/// Held-out examples for the same pairs as
/// [`heldout_examples`](crate::training::heldout_examples): the negative
/// replaces the predicted side's customer and keeps everything else.
pub fn mlp_heldout_examples(
    mlp: &Mlp,
    graph: &BipartiteGraph,
    txns: &[RawTransaction],
    seed: u64,
) -> Result<Vec<ScoredExample>, TrainingError> {
    let features = |p: &crate::graph::Party| {
        p.as_customer()
            .and_then(|id| graph.customer_index(id))
            .map(|c| graph.customer_features().row(c))
    };
    let width = 2 * mlp.d_c + mlp.d_t;
    let mut rows = Vec::new();
    let pairs = heldout_pairs(graph, txns, seed);
    for p in &pairs {
        let t = &txns[p.txn];
        if t.features.len() != mlp.d_t {
            return Err(TrainingError::Data(format!("transaction {} has the wrong feature width", t.txn_id)));
        }
        let x_t = graph.txn_scaler().apply(&t.features);
        let (src, dst) = (features(&t.source), features(&t.dest));
        let other = Some(graph.customer_features().row(p.negative));
        rows.extend(mlp.input_row(src, dst, &x_t)?);
        match p.direction {
            Direction::Outgoing => rows.extend(mlp.input_row(other, dst, &x_t)?),
            Direction::Incoming => rows.extend(mlp.input_row(src, other, &x_t)?),
        }
    }
    let mut out = Vec::with_capacity(2 * pairs.len());
    for chunk in rows.chunks(width * 4096) {
        let y = mlp.predict_rows(Tensor::matrix(chunk.len() / width, width, chunk.to_vec())?)?;
        out.extend(y.chunks(2).flat_map(|p| [ScoredExample::new(p[0], true), ScoredExample::new(p[1], false)]));
    }
    Ok(out)
}
