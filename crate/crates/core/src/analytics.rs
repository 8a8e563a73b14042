//! Embedding exports, per-customer transaction clustering, and cosine
//! divergence of customer embeddings across snapshots.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{full_subgraph, BipartiteGraph, GraphError, GraphView, NodeType};
use crate::model::{Model, ModelError};

pub const DIVERGENCE_THRESHOLD: f64 = 0.8;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroNorm,
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("analytics configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, AnalyticsError> {
    if u.len() != v.len() {
        return Err(AnalyticsError::Dimension(format!("{} vs {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalyticsError::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Rows of one node type's embeddings, keyed by external id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, AnalyticsError> {
        if ids.len() != rows.len() {
            return Err(AnalyticsError::Dimension(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(AnalyticsError::Dimension("rows of unequal width".into()));
        }
        Ok(Self { ids, dim, rows })
    }

    /// Header `id,e0,e1,...` then one row per node, floats in shortest
    /// round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), AnalyticsError> {
        write!(w, "id")?;
        for j in 0..self.dim {
            write!(w, ",e{j}")?;
        }
        writeln!(w)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            write!(w, "{id}")?;
            for x in row {
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, AnalyticsError> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let mut parts = line.split(',');
            let id = parts.next().unwrap_or_default().to_string();
            let row = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| AnalyticsError::Config(format!("line {}: {e}", n + 1)))?;
            ids.push(id);
            rows.push(row);
        }
        Self::new(ids, rows)
    }
}

/// Inference-mode embeddings of every node of `node_type` after encoder
/// layer `layer` (1-based, at most the model depth).
pub fn export_embeddings(
    model: &Model,
    graph: &BipartiteGraph,
    node_type: NodeType,
    layer: usize,
) -> Result<EmbeddingTable, AnalyticsError> {
    let depth = model.config().layers;
    if layer == 0 || layer > depth {
        return Err(AnalyticsError::Config(format!("layer must lie in 1..={depth}, got {layer}")));
    }
    let sub = full_subgraph(&GraphView::new(graph), depth)?;
    let (zc, zt) = model.embed_layer(&sub, layer)?;
    let (ids, z) = match node_type {
        NodeType::Customer => (graph.customer_ids().to_vec(), zc),
        NodeType::Transaction => (graph.txn_ids().to_vec(), zt),
    };
    let rows = (0..z.rows()).map(|i| z.row(i).to_vec()).collect();
    EmbeddingTable::new(ids, rows)
}

/// Customer embeddings of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotEmbeddings {
    pub snapshot: String,
    table: EmbeddingTable,
    index: HashMap<String, usize>,
}

impl SnapshotEmbeddings {
    pub fn new(snapshot: impl Into<String>, table: EmbeddingTable) -> Result<Self, AnalyticsError> {
        let mut index = HashMap::with_capacity(table.ids.len());
        for (i, id) in table.ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(AnalyticsError::Config(format!("customer {id} appears twice")));
            }
        }
        Ok(Self {
            snapshot: snapshot.into(),
            table,
            index,
        })
    }

    pub fn from_model(
        snapshot: impl Into<String>,
        model: &Model,
        graph: &BipartiteGraph,
        layer: usize,
    ) -> Result<Self, AnalyticsError> {
        Self::new(snapshot, export_embeddings(model, graph, NodeType::Customer, layer)?)
    }

    pub fn get(&self, customer: &str) -> Option<&[f64]> {
        self.index.get(customer).map(|&i| self.table.rows[i].as_slice())
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub customer_id: String,
    /// Snapshots holding the customer, in input order.
    pub snapshots: Vec<String>,
    pub similarity: Vec<Vec<f64>>,
    pub threshold: f64,
    /// Some off-diagonal similarity is below `threshold`.
    pub diverging: bool,
}

pub fn divergence_report(
    snapshots: &[SnapshotEmbeddings],
    customer: &str,
    threshold: f64,
) -> Result<DivergenceReport, AnalyticsError> {
    let present: Vec<(&str, &[f64])> = snapshots
        .iter()
        .filter_map(|s| s.get(customer).map(|v| (s.snapshot.as_str(), v)))
        .collect();
    if present.is_empty() {
        return Err(AnalyticsError::Lookup(format!("customer {customer} is in no snapshot")));
    }
    if present.len() < 2 {
        return Err(AnalyticsError::Lookup(format!("customer {customer} is in only one snapshot")));
    }
    let n = present.len();
    let mut m = vec![vec![1.0; n]; n];
    let mut diverging = false;
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_similarity(present[i].1, present[j].1)?;
            m[i][j] = s;
            m[j][i] = s;
            diverging |= s < threshold;
        }
    }
    Ok(DivergenceReport {
        customer_id: customer.to_string(),
        snapshots: present.iter().map(|p| p.0.to_string()).collect(),
        similarity: m,
        threshold,
        diverging,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia of the seeding centroids, before any Lloyd iteration.
    pub seeded_inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties) and the total squared distance.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let a = points
        .iter()
        .map(|p| {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            total += d;
            best
        })
        .collect();
    (a, total)
}

/// k-means++ seeding followed by Lloyd iterations, deterministic per `seed`.
pub fn cluster_transactions(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering, AnalyticsError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(AnalyticsError::Config(format!("k = {k} needs 1 <= k <= {n} points")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(AnalyticsError::Dimension("points of unequal width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > u && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    let (mut assignment, seeded_inertia) = assign(points, &centroids);
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            // an empty cluster keeps its centroid
            if counts[j] == 0 {
                continue;
            }
            let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&c, &centroids[j]).sqrt());
            centroids[j] = c;
        }
        let (a, inertia) = assign(points, &centroids);
        assignment = a;
        trace.push(inertia);
        if shift < KMEANS_TOL {
            break;
        }
    }
    let inertia = trace.last().copied().unwrap_or(seeded_inertia);
    Ok(Clustering {
        assignment,
        centroids,
        inertia,
        seeded_inertia,
        trace,
    })
}

/// Embeddings of the transactions a customer sends or receives.
pub fn customer_transactions(
    table: &EmbeddingTable,
    graph: &BipartiteGraph,
    customer: &str,
) -> Result<(Vec<String>, Vec<Vec<f64>>), AnalyticsError> {
    let c = graph
        .customer_index(customer)
        .ok_or_else(|| AnalyticsError::Lookup(format!("unknown customer {customer}")))?;
    if table.rows.len() != graph.n_transactions() {
        return Err(AnalyticsError::Dimension("table does not cover the graph's transactions".into()));
    }
    let mut txns: Vec<usize> = graph.outgoing_txns(c).iter().chain(graph.incoming_txns(c)).copied().collect();
    txns.sort_unstable();
    txns.dedup();
    Ok((
        txns.iter().map(|&t| table.ids[t].clone()).collect(),
        txns.iter().map(|&t| table.rows[t].clone()).collect(),
    ))
}
