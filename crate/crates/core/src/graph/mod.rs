//! Customer/transaction bipartite graph: ingestion, storage, edge splits
//! and sampling.

mod bipartite;
mod ingest;
mod sampling;
mod split;

pub use bipartite::{build_graph, BipartiteGraph, Csr, FeatureScaler, NodeType, Relation, SNAPSHOT_VERSION};
pub use ingest::{read_jsonl, write_jsonl, CustomerProfile, Party, RawTransaction, EXTERNAL};
pub use sampling::{
    full_subgraph, sample_from_nodes, sample_negatives, sample_negatives_with, sample_neighborhood, EdgeMask, GraphView,
    LocalAdjacency, Subgraph, TransientTxn,
};
pub use split::{split_edges, Direction, Edge, EdgeSplit, SplitRatios};

use thiserror::Error;

use crate::ndtensor::TensorError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("snapshot format error: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub fn profile(id: &str) -> CustomerProfile {
        let h = id.bytes().fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
        CustomerProfile {
            customer_id: id.to_string(),
            features: vec![(h % 13) as f64, (h % 7) as f64 - 3.0, 1.0],
        }
    }

    pub fn txn(id: &str, source: Party, dest: Party) -> RawTransaction {
        let h = id.bytes().fold(3u64, |a, b| a.wrapping_mul(17).wrapping_add(b as u64));
        RawTransaction {
            txn_id: id.to_string(),
            source,
            dest,
            timestamp: (h % 1000) as i64,
            features: vec![(h % 11) as f64, (h % 5) as f64],
        }
    }

    /// Random graph whose internal transfers always connect two distinct customers.
    pub fn random_graph(n_c: usize, n_t: usize, external_rate: f64, seed: u64) -> BipartiteGraph {
        let (txns, profiles) = random_records(n_c, n_t, external_rate, seed);
        build_graph(&txns, &profiles).unwrap()
    }

    pub fn random_records(
        n_c: usize,
        n_t: usize,
        external_rate: f64,
        seed: u64,
    ) -> (Vec<RawTransaction>, Vec<CustomerProfile>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles: Vec<CustomerProfile> = (0..n_c)
            .map(|i| CustomerProfile {
                customer_id: format!("c{i}"),
                features: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let txns: Vec<RawTransaction> = (0..n_t)
            .map(|i| {
                let s = rng.random_range(0..n_c);
                let mut d = rng.random_range(0..n_c);
                if n_c > 1 {
                    while d == s {
                        d = rng.random_range(0..n_c);
                    }
                }
                let (mut src, mut dst) = (Party::customer(format!("c{s}")), Party::customer(format!("c{d}")));
                if rng.random::<f64>() < external_rate {
                    if rng.random::<bool>() {
                        src = Party::External;
                    } else {
                        dst = Party::External;
                    }
                }
                RawTransaction {
                    txn_id: format!("t{i}"),
                    source: src,
                    dest: dst,
                    timestamp: i as i64,
                    features: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                }
            })
            .collect();
        (txns, profiles)
    }
}
