//! Two-stage baseline: mutual-information pretraining of the GAT encoder,
//! one objective per node type, then a decoder fitted on frozen embeddings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{full_subgraph, BipartiteGraph, EdgeSplit, GraphView, NodeType, Subgraph};
use crate::model::{Bound, EncoderConfig, EncoderKind, Model, ModelError, ParamId, ParamStore};
use crate::ndtensor::{Mode, Tape, Tensor, Var};
use crate::training::{fit_model, Adam, EpochRecord, FitResult, TrainingConfig, TrainingError};

const DGI_SALT: u64 = 0x6467_6900_0000_0004;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgiConfig {
    pub encoder: EncoderConfig,
    pub learning_rate: f64,
    /// One full-graph step per epoch.
    pub max_epochs: usize,
    /// Epochs without a lower pretraining loss before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for DgiConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::defaults(EncoderKind::Gat),
            learning_rate: 0.01,
            max_epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

/// Bilinear discriminators, one `hidden x hidden` matrix per node type.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    params: ParamStore,
    w: [ParamId; 2],
}

impl Discriminator {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = [
            params.add_uniform("dgi.w.customer", hidden, hidden, hidden, hidden, &mut rng),
            params.add_uniform("dgi.w.transaction", hidden, hidden, hidden, hidden, &mut rng),
        ];
        Self { params, w }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn weight(&self, t: NodeType) -> ParamId {
        self.w[type_slot(t)]
    }
}

fn type_slot(t: NodeType) -> usize {
    match t {
        NodeType::Customer => 0,
        NodeType::Transaction => 1,
    }
}

/// Rows of `x` in a random order; every column keeps its multiset of values.
pub fn shuffle_rows<R: Rng>(x: &Tensor, rng: &mut R) -> Tensor {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.shuffle(rng);
    let data = order.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Tensor::matrix(x.rows(), x.cols(), data).expect("same shape")
}

/// `sigmoid(h_i^T W s)` for every row `h_i` of `h`, with summary `s = sigmoid(mean_i h_i)`.
pub fn discriminate(tape: &Tape, h: Var, w: Var, summary: Var) -> Result<Var, ModelError> {
    let scores = tape.matmul(tape.matmul(h, w)?, tape.transpose(summary)?)?;
    Ok(tape.sigmoid(scores)?)
}

/// Summary vector of a node type's embeddings.
pub fn readout(tape: &Tape, h: Var) -> Result<Var, ModelError> {
    Ok(tape.sigmoid(tape.mean_rows(h)?)?)
}

/// Per-type objective: mean BCE of real rows against 1 plus mean BCE of
/// corrupted rows against 0.
pub fn dgi_type_loss(tape: &Tape, real: Var, corrupted: Var, w: Var) -> Result<Var, ModelError> {
    let s = readout(tape, real)?;
    let pos = discriminate(tape, real, w, s)?;
    let neg = discriminate(tape, corrupted, w, s)?;
    let n_pos = tape.value(pos).len();
    let n_neg = tape.value(neg).len();
    let lp = tape.bce(pos, std::rc::Rc::new(vec![1.0; n_pos]))?;
    let ln = tape.bce(neg, std::rc::Rc::new(vec![0.0; n_neg]))?;
    Ok(tape.add(lp, ln)?)
}

fn seed_rows(enc: &crate::model::Encoded, t: NodeType) -> Var {
    match t {
        NodeType::Customer => enc.customers,
        NodeType::Transaction => enc.transactions,
    }
}

/// One step: the summed objective of both node types, each with its own
/// corruption of the other type left untouched.
fn dgi_step(
    model: &mut Model,
    disc: &mut Discriminator,
    adams: &mut [Adam; 2],
    sub: &Subgraph,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainingError> {
    let tape = Tape::new();
    let bound: Bound = model.params().bind(&tape);
    let dbound = disc.params.bind(&tape);
    let real = model.encode(&tape, &bound, sub, Mode::Train, rng.random())?;
    let mut total: Option<Var> = None;
    for t in [NodeType::Customer, NodeType::Transaction] {
        let x = match t {
            NodeType::Customer => sub.customer_features(),
            NodeType::Transaction => sub.txn_features(),
        };
        let corrupted_sub = sub.with_features(t, shuffle_rows(x, rng))?;
        let corrupted = model.encode(&tape, &bound, &corrupted_sub, Mode::Train, rng.random())?;
        let l = dgi_type_loss(&tape, seed_rows(&real, t), seed_rows(&corrupted, t), dbound.var(disc.weight(t)))?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let loss = total.expect("two node types");
    let mut grads = tape.backward(loss)?;
    let g: Vec<_> = model.params().ids().map(|id| grads.take(bound.var(id))).collect();
    adams[0].step(model.params_mut(), &g);
    let g: Vec<_> = disc.params.ids().map(|id| grads.take(dbound.var(id))).collect();
    adams[1].step(&mut disc.params, &g);
    model.apply_batch_stats(&real.batch_stats);
    Ok(tape.item(loss))
}

pub struct DgiPretrained {
    /// Encoder (and untouched decoder) from the epoch with the lowest loss.
    pub model: Model,
    pub discriminator: Discriminator,
    /// Pretraining loss per epoch.
    pub losses: Vec<f64>,
}

/// Full-graph pretraining with early stopping on the objective itself.
pub fn dgi_pretrain(graph: &BipartiteGraph, config: &DgiConfig) -> Result<DgiPretrained, TrainingError> {
    config.encoder.validate()?;
    if config.max_epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(TrainingError::Config("dgi needs positive max_epochs and learning_rate".into()));
    }
    let mut model = Model::new(config.encoder.clone(), graph.customer_dim(), graph.txn_dim(), config.seed)?;
    let mut disc = Discriminator::new(config.encoder.hidden, config.seed ^ DGI_SALT);
    let mut adams = [
        Adam::new(model.params(), config.learning_rate),
        Adam::new(disc.params(), config.learning_rate),
    ];
    let sub = full_subgraph(&GraphView::new(graph), config.encoder.layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ DGI_SALT.rotate_left(23));
    let mut losses = Vec::new();
    let mut best: Option<(f64, Model, Discriminator)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let loss = dgi_step(&mut model, &mut disc, &mut adams, &sub, &mut rng).map_err(|e| e.locate(epoch, 0))?;
        if !loss.is_finite() {
            return Err(TrainingError::NonFinite(format!("dgi loss at epoch {epoch}")));
        }
        losses.push(loss);
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, model.clone(), disc.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    let (_, model, discriminator) = best.expect("at least one epoch runs");
    Ok(DgiPretrained {
        model,
        discriminator,
        losses,
    })
}

/// Fits only the decoder on top of a pretrained encoder, which runs in
/// inference mode and is returned unchanged.
pub fn dgi_downstream(
    mut model: Model,
    graph: &BipartiteGraph,
    split: &EdgeSplit,
    config: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult, TrainingError> {
    if config.encoder() != *model.config() {
        return Err(TrainingError::Config(
            "downstream training config must describe the pretrained encoder".into(),
        ));
    }
    model.freeze_encoder(true);
    let mut out = fit_model(model, graph, split, config, Mode::Eval, on_epoch)?;
    out.model.freeze_encoder(false);
    Ok(out)
}
