use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeType, Relation, Subgraph};
use crate::ndtensor::{sigmoid, BatchStats, Mode, RunningStats, Tape, Tensor, Var};

use super::layers::{prefix_rows, type_index, AttentionMap, Ctx, Layer, RelEdges};
use super::params::{Bound, ParamId, ParamStore};
use super::{EncoderConfig, ModelError};

/// Encoder stack plus the link decoder.
#[derive(Clone)]
pub struct Model {
    pub(crate) config: EncoderConfig,
    pub(crate) dims: [usize; 2],
    pub(crate) params: ParamStore,
    pub(crate) layers: Vec<Layer>,
    pub(crate) decoder: ParamId,
    pub(crate) running: Vec<RunningStats>,
}

/// Output of an encoder pass over a subgraph.
pub struct Encoded {
    /// Rows for the subgraph's seed customers.
    pub customers: Var,
    /// Rows for the subgraph's seed transactions.
    pub transactions: Var,
    /// Batch statistics gathered by training-mode batch norm.
    pub batch_stats: Vec<(usize, BatchStats)>,
}

impl Model {
    /// Fresh parameters for inputs of `d_c` customer and `d_t` transaction features.
    pub fn new(config: EncoderConfig, d_c: usize, d_t: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        let mut n_stats = 0;
        let mut d_in = [d_c, d_t];
        for l in 1..=config.layers {
            let hidden = l < config.layers;
            layers.push(Layer::new(
                config.kind,
                l,
                d_in,
                config.hidden,
                config.heads,
                hidden,
                &mut params,
                &mut n_stats,
                &mut rng,
            )?);
            d_in = [config.hidden; 2];
        }
        let decoder = params.add_uniform("decoder.w", config.hidden, 1, config.hidden, 1, &mut rng);
        Ok(Self {
            running: vec![RunningStats::new(config.hidden); n_stats],
            config,
            dims: [d_c, d_t],
            params,
            layers,
            decoder,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Input feature widths `(d_c, d_t)`.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.dims[0], self.dims[1])
    }

    pub fn output_dim(&self) -> usize {
        self.config.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn decoder_id(&self) -> ParamId {
        self.decoder
    }

    pub fn decoder_weights(&self) -> &[f64] {
        self.params.get(self.decoder).data()
    }

    /// Freezes or unfreezes every encoder parameter, leaving the decoder trainable.
    pub fn freeze_encoder(&mut self, frozen: bool) {
        let ids: Vec<ParamId> = self.params.ids().filter(|&id| id != self.decoder).collect();
        for id in ids {
            self.params.set_frozen(id, frozen);
        }
    }

    pub fn apply_batch_stats(&mut self, updates: &[(usize, BatchStats)]) {
        for (i, s) in updates {
            self.running[*i].update(s);
        }
    }

    /// Runs all layers over `sub` and returns embeddings of its seed nodes.
    pub fn encode(
        &self,
        tape: &Tape,
        bound: &Bound,
        sub: &Subgraph,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Encoded, ModelError> {
        let (enc, _) = self.run(tape, bound, sub, self.layers.len(), mode, dropout_seed, false)?;
        Ok(enc)
    }

    /// Runs only the first `depth` layers; the result holds layer-`depth` embeddings.
    pub fn encode_layers(
        &self,
        tape: &Tape,
        bound: &Bound,
        sub: &Subgraph,
        depth: usize,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Encoded, ModelError> {
        if depth == 0 || depth > self.layers.len() {
            return Err(ModelError::Config(format!(
                "layer {depth} requested from a {}-layer encoder",
                self.layers.len()
            )));
        }
        let (enc, _) = self.run(tape, bound, sub, depth, mode, dropout_seed, false)?;
        Ok(enc)
    }

    /// Inference-mode seed embeddings as plain tensors `(customers, transactions)`.
    pub fn embed(&self, sub: &Subgraph) -> Result<(Tensor, Tensor), ModelError> {
        self.embed_layer(sub, self.layers.len())
    }

    pub fn embed_layer(&self, sub: &Subgraph, depth: usize) -> Result<(Tensor, Tensor), ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind_constant(&tape);
        let enc = self.encode_layers(&tape, &bound, sub, depth, Mode::Eval, 0)?;
        Ok((tape.to_tensor(enc.customers), tape.to_tensor(enc.transactions)))
    }

    /// Inference-mode attention coefficients of every GAT layer and relation.
    pub fn attention(&self, sub: &Subgraph) -> Result<Vec<AttentionMap>, ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind_constant(&tape);
        let (_, probe) = self.run(&tape, &bound, sub, self.layers.len(), Mode::Eval, 0, true)?;
        Ok(probe
            .into_iter()
            .map(|(layer, relation, segments, n_dst, alpha)| AttentionMap {
                layer,
                relation,
                segments: segments.to_vec(),
                n_dst,
                alpha: tape.to_tensor(alpha),
            })
            .collect())
    }

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn run(
        &self,
        tape: &Tape,
        bound: &Bound,
        sub: &Subgraph,
        depth: usize,
        mode: Mode,
        dropout_seed: u64,
        probe: bool,
    ) -> Result<(Encoded, Vec<(usize, Relation, Rc<Vec<usize>>, usize, Var)>), ModelError> {
        if sub.depth() < depth {
            return Err(ModelError::Config(format!(
                "subgraph depth {} is below the {depth} layers requested",
                sub.depth()
            )));
        }
        let (xc, xt) = (sub.customer_features(), sub.txn_features());
        if xc.cols() != self.dims[0] || xt.cols() != self.dims[1] {
            return Err(ModelError::Dimension(format!(
                "features are {}/{} wide, model expects {}/{}",
                xc.cols(),
                xt.cols(),
                self.dims[0],
                self.dims[1]
            )));
        }
        let within = |t: NodeType, h: usize| sub.within(t, h);
        let mut z = [
            prefix_rows(tape, tape.constant(xc.clone()), within(NodeType::Customer, depth))?,
            prefix_rows(tape, tape.constant(xt.clone()), within(NodeType::Transaction, depth))?,
        ];
        let mut ctx = Ctx {
            tape,
            bound,
            mode,
            running: &self.running,
            updates: Vec::new(),
            probe: probe.then(Vec::new),
        };
        for (l, layer) in self.layers[..depth].iter().enumerate() {
            let hop = depth - l - 1;
            let n_dst = [within(NodeType::Customer, hop), within(NodeType::Transaction, hop)];
            let edges = Relation::ALL.map(|rel| {
                let adj = sub.relation(rel);
                let k = adj.prefix(n_dst[type_index(rel.dst_type())]);
                RelEdges {
                    dst: Rc::new(adj.dst[..k].to_vec()),
                    src: Rc::new(adj.src[..k].to_vec()),
                }
            });
            if self.config.dropout > 0.0 {
                for (i, zi) in z.iter_mut().enumerate() {
                    let s = dropout_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((2 * l + i) as u64);
                    *zi = tape.dropout(*zi, self.config.dropout, s, mode)?;
                }
            }
            z = layer.forward(&mut ctx, z, n_dst, &edges)?;
        }
        let probe = ctx.probe.take().unwrap_or_default();
        Ok((
            Encoded {
                customers: z[0],
                transactions: z[1],
                batch_stats: ctx.updates,
            },
            probe,
        ))
    }

    /// `sigmoid(W_dec (z_c ⊙ z_t))` row by row; returns an `n x 1` column.
    pub fn decode(&self, tape: &Tape, bound: &Bound, z_c: Var, z_t: Var) -> Result<Var, ModelError> {
        let (sc, st) = (tape.shape(z_c), tape.shape(z_t));
        if sc != st || sc.len() != 2 || sc[1] != self.config.hidden {
            return Err(ModelError::Dimension(format!("decoder inputs {sc:?} and {st:?}")));
        }
        let h = tape.hadamard(z_c, z_t)?;
        Ok(tape.sigmoid(tape.matmul(h, bound.var(self.decoder))?)?)
    }

    /// Decoder applied to a single pair of precomputed embeddings.
    pub fn decode_pair(&self, z_c: &[f64], z_t: &[f64]) -> Result<f64, ModelError> {
        decode_direct(self.decoder_weights(), z_c, z_t)
    }
}

/// `sigmoid(sum_i w_i * z_c[i] * z_t[i])`.
pub fn decode_direct(w: &[f64], z_c: &[f64], z_t: &[f64]) -> Result<f64, ModelError> {
    if w.len() != z_c.len() || z_c.len() != z_t.len() {
        return Err(ModelError::Dimension(format!(
            "decoder width {}, embeddings {} and {}",
            w.len(),
            z_c.len(),
            z_t.len()
        )));
    }
    let s: f64 = w.iter().zip(z_c).zip(z_t).map(|((w, a), b)| w * a * b).sum();
    Ok(sigmoid(s))
}
