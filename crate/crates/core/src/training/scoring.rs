//! Anomaly scoring of new transactions against a reference graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{
    full_subgraph, sample_from_nodes, BipartiteGraph, Direction, GraphView, Party, RawTransaction, TransientTxn,
};
use crate::evaluation::ScoredExample;
use crate::model::{anomaly_score, Model};
use crate::ndtensor::Tensor;

use super::TrainingError;

/// Link likelihood of one known-customer side of a transaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyResult {
    pub txn_id: String,
    pub direction: Direction,
    pub customer_id: String,
    /// `None` when the customer has no node in the reference graph.
    pub y_hat: Option<f64>,
    pub anomaly_score: Option<f64>,
    pub cold_start: bool,
}

/// Holds inference-mode customer embeddings of a reference graph and embeds
/// new transactions against it.
pub struct Scorer<'a> {
    model: &'a Model,
    graph: &'a BipartiteGraph,
    customers: Tensor,
    fanout: usize,
    seed: u64,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, graph: &'a BipartiteGraph, fanout: usize, seed: u64) -> Result<Self, TrainingError> {
        let (d_c, d_t) = model.input_dims();
        if d_c != graph.customer_dim() || d_t != graph.txn_dim() {
            return Err(TrainingError::Data(format!(
                "model expects {d_c}/{d_t} features, graph has {}/{}",
                graph.customer_dim(),
                graph.txn_dim()
            )));
        }
        let sub = full_subgraph(&GraphView::new(graph), model.config().layers)?;
        let (customers, _) = model.embed(&sub)?;
        Ok(Self {
            model,
            graph,
            customers,
            fanout,
            seed,
        })
    }

    pub fn customer_embedding(&self, c: usize) -> &[f64] {
        self.customers.row(c)
    }

    pub fn customer_embeddings(&self) -> &Tensor {
        &self.customers
    }

    /// Embedding of a transaction inserted next to `source` and `dest`, with
    /// its `severed` edge removed.
    pub fn txn_embedding(
        &self,
        features: &[f64],
        source: Option<usize>,
        dest: Option<usize>,
        severed: Direction,
        seed: u64,
    ) -> Result<Vec<f64>, TrainingError> {
        if features.len() != self.graph.txn_dim() {
            return Err(TrainingError::Data(format!(
                "transaction has {} features, expected {}",
                features.len(),
                self.graph.txn_dim()
            )));
        }
        let mut view = GraphView::new(self.graph);
        let id = view.insert(TransientTxn {
            features: features.to_vec(),
            source,
            dest,
        });
        view.sever(id, severed);
        let sub = sample_from_nodes(&view, &[], &[id], self.fanout, self.model.config().layers, seed)?;
        let (_, zt) = self.model.embed(&sub)?;
        Ok(zt.row(0).to_vec())
    }

    pub fn predict(&self, customer: usize, z_t: &[f64]) -> Result<f64, TrainingError> {
        Ok(self.model.decode_pair(self.customers.row(customer), z_t)?)
    }

    /// One result per side of each transaction that names a customer.
    pub fn score(&self, txns: &[RawTransaction]) -> Result<Vec<AnomalyResult>, TrainingError> {
        let mut out = Vec::new();
        for (i, t) in txns.iter().enumerate() {
            if t.features.len() != self.graph.txn_dim() {
                return Err(TrainingError::Data(format!(
                    "transaction {} has {} features, expected {}",
                    t.txn_id,
                    t.features.len(),
                    self.graph.txn_dim()
                )));
            }
            let features = self.graph.txn_scaler().apply(&t.features);
            let resolve = |p: &Party| p.as_customer().and_then(|id| self.graph.customer_index(id));
            let (src, dst) = (resolve(&t.source), resolve(&t.dest));
            for (direction, party, known) in [(Direction::Outgoing, &t.source, src), (Direction::Incoming, &t.dest, dst)] {
                let Some(customer_id) = party.as_customer() else {
                    continue;
                };
                let mut r = AnomalyResult {
                    txn_id: t.txn_id.clone(),
                    direction,
                    customer_id: customer_id.to_string(),
                    y_hat: None,
                    anomaly_score: None,
                    cold_start: true,
                };
                if let Some(c) = known {
                    let seed = self.seed.wrapping_add((i as u64) << 1 | (direction == Direction::Incoming) as u64);
                    let z_t = self.txn_embedding(&features, src, dst, direction, seed)?;
                    let y = self.predict(c, &z_t)?;
                    r.y_hat = Some(y);
                    r.anomaly_score = Some(anomaly_score(y));
                    r.cold_start = false;
                }
                out.push(r);
            }
        }
        Ok(out)
    }
}

pub fn score_transactions(
    model: &Model,
    graph: &BipartiteGraph,
    txns: &[RawTransaction],
    fanout: usize,
    seed: u64,
) -> Result<Vec<AnomalyResult>, TrainingError> {
    Scorer::new(model, graph, fanout, seed)?.score(txns)
}

/// A held-out link and its corrupted twin: the same transaction paired with
/// another customer of the reference graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeldoutPair {
    /// Index into the transaction slice.
    pub txn: usize,
    pub direction: Direction,
    pub customer: usize,
    pub negative: usize,
}

/// One pair per side of each transaction whose customer is in `graph`.
/// Negative customers depend only on `seed` and the order of `txns`.
pub fn heldout_pairs(graph: &BipartiteGraph, txns: &[RawTransaction], seed: u64) -> Vec<HeldoutPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n_customers();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    for (i, t) in txns.iter().enumerate() {
        for (direction, party) in [(Direction::Outgoing, &t.source), (Direction::Incoming, &t.dest)] {
            let Some(c) = party.as_customer().and_then(|id| graph.customer_index(id)) else {
                continue;
            };
            let negative = loop {
                let x = rng.random_range(0..n);
                if x != c {
                    break x;
                }
            };
            out.push(HeldoutPair {
                txn: i,
                direction,
                customer: c,
                negative,
            });
        }
    }
    out
}

/// Link-prediction examples for held-out transactions: each pair yields the
/// true customer's prediction (label 1) and the negative's (label 0), both
/// decoded against the same severed transaction embedding.
pub fn heldout_examples(
    model: &Model,
    graph: &BipartiteGraph,
    txns: &[RawTransaction],
    fanout: usize,
    seed: u64,
) -> Result<Vec<ScoredExample>, TrainingError> {
    let scorer = Scorer::new(model, graph, fanout, seed)?;
    let mut out = Vec::new();
    for (k, p) in heldout_pairs(graph, txns, seed).into_iter().enumerate() {
        let t = &txns[p.txn];
        let resolve = |party: &Party| party.as_customer().and_then(|id| graph.customer_index(id));
        let features = graph.txn_scaler().apply(&t.features);
        let z_t = scorer.txn_embedding(
            &features,
            resolve(&t.source),
            resolve(&t.dest),
            p.direction,
            seed.wrapping_add(k as u64),
        )?;
        out.push(ScoredExample::new(scorer.predict(p.customer, &z_t)?, true));
        out.push(ScoredExample::new(scorer.predict(p.negative, &z_t)?, false));
    }
    Ok(out)
}
