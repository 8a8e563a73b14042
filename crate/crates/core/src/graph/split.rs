use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, GraphError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// customer -> transaction
    Outgoing,
    /// transaction -> customer
    Incoming,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Outgoing, Direction::Incoming];

    pub fn other(self) -> Direction {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

/// A customer/transaction edge. A transaction has at most one edge per
/// direction, so `(direction, txn)` identifies it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub direction: Direction,
    pub txn: usize,
    pub customer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub message: Vec<Edge>,
    pub supervision: Vec<Edge>,
    pub validation: Vec<Edge>,
}

impl EdgeSplit {
    pub fn supervision_in(&self, direction: Direction) -> Vec<Edge> {
        self.supervision.iter().filter(|e| e.direction == direction).copied().collect()
    }

    pub fn validation_in(&self, direction: Direction) -> Vec<Edge> {
        self.validation.iter().filter(|e| e.direction == direction).copied().collect()
    }
}

/// Split ratios for message passing, supervision and validation edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub message: f64,
    pub supervision: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            message: 0.5,
            supervision: 0.3,
            validation: 0.2,
        }
    }
}

/// Uniform random partition of each direction's edges, deterministic per `seed`.
pub fn split_edges(g: &BipartiteGraph, ratios: SplitRatios, seed: u64) -> Result<EdgeSplit, GraphError> {
    let SplitRatios {
        message,
        supervision,
        validation,
    } = ratios;
    if [message, supervision, validation].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(GraphError::Config(format!("split ratios must lie in [0, 1]: {ratios:?}")));
    }
    if (message + supervision + validation - 1.0).abs() > 1e-9 {
        return Err(GraphError::Config(format!("split ratios must sum to 1: {ratios:?}")));
    }
    let mut split = EdgeSplit {
        message: Vec::new(),
        supervision: Vec::new(),
        validation: Vec::new(),
    };
    for (k, direction) in Direction::BOTH.into_iter().enumerate() {
        let mut edges = g.edges(direction);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 0x9E37_79B9));
        edges.shuffle(&mut rng);
        let n = edges.len();
        let n_sup = ((n as f64) * supervision).round() as usize;
        let n_val = (((n as f64) * validation).round() as usize).min(n - n_sup.min(n));
        let n_sup = n_sup.min(n);
        split.supervision.extend_from_slice(&edges[..n_sup]);
        split.validation.extend_from_slice(&edges[n_sup..n_sup + n_val]);
        split.message.extend_from_slice(&edges[n_sup + n_val..]);
    }
    Ok(split)
}
