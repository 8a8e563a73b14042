//! Edge masks, layered neighborhood sampling, severing and negative sampling.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ndtensor::Tensor;

use super::{BipartiteGraph, Direction, Edge, GraphError, NodeType, Relation};

/// Which edges of a graph take part in message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMask {
    outgoing: Vec<bool>,
    incoming: Vec<bool>,
}

impl EdgeMask {
    /// Every edge of `g`.
    pub fn full(g: &BipartiteGraph) -> Self {
        let n = g.n_transactions();
        Self {
            outgoing: (0..n).map(|t| g.txn_source(t).is_some()).collect(),
            incoming: (0..n).map(|t| g.txn_dest(t).is_some()).collect(),
        }
    }

    /// Only the listed edges.
    pub fn from_edges(g: &BipartiteGraph, edges: &[Edge]) -> Self {
        let n = g.n_transactions();
        let mut m = Self {
            outgoing: vec![false; n],
            incoming: vec![false; n],
        };
        for e in edges {
            if g.has_edge(e.customer, e.txn, e.direction) {
                m.slot(e.direction)[e.txn] = true;
            }
        }
        m
    }

    fn slot(&mut self, d: Direction) -> &mut Vec<bool> {
        match d {
            Direction::Outgoing => &mut self.outgoing,
            Direction::Incoming => &mut self.incoming,
        }
    }

    pub fn contains(&self, txn: usize, d: Direction) -> bool {
        let v = match d {
            Direction::Outgoing => &self.outgoing,
            Direction::Incoming => &self.incoming,
        };
        v.get(txn).copied().unwrap_or(false)
    }

    pub fn sever(&mut self, txn: usize, d: Direction) {
        if let Some(v) = self.slot(d).get_mut(txn) {
            *v = false;
        }
    }

    pub fn count(&self, d: Direction) -> usize {
        match d {
            Direction::Outgoing => self.outgoing.iter().filter(|v| **v).count(),
            Direction::Incoming => self.incoming.iter().filter(|v| **v).count(),
        }
    }
}

/// A transaction inserted on top of a graph without mutating it.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientTxn {
    /// Standardized features.
    pub features: Vec<f64>,
    pub source: Option<usize>,
    pub dest: Option<usize>,
}

/// Read-only view of a graph restricted to a mask, minus severed edges,
/// plus transient transactions numbered from `n_transactions()` upward.
#[derive(Clone, Debug)]
pub struct GraphView<'g> {
    graph: &'g BipartiteGraph,
    mask: Option<&'g EdgeMask>,
    severed: HashSet<(Direction, usize)>,
    transient: Vec<TransientTxn>,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g BipartiteGraph) -> Self {
        Self {
            graph,
            mask: None,
            severed: HashSet::new(),
            transient: Vec::new(),
        }
    }

    pub fn masked(graph: &'g BipartiteGraph, mask: &'g EdgeMask) -> Self {
        Self {
            mask: Some(mask),
            ..Self::new(graph)
        }
    }

    pub fn graph(&self) -> &'g BipartiteGraph {
        self.graph
    }

    /// Inserts a transient transaction and returns its node id.
    pub fn insert(&mut self, txn: TransientTxn) -> usize {
        self.transient.push(txn);
        self.graph.n_transactions() + self.transient.len() - 1
    }

    pub fn sever(&mut self, txn: usize, direction: Direction) {
        self.severed.insert((direction, txn));
    }

    pub fn n_customers(&self) -> usize {
        self.graph.n_customers()
    }

    pub fn n_transactions(&self) -> usize {
        self.graph.n_transactions() + self.transient.len()
    }

    fn transient(&self, t: usize) -> Option<&TransientTxn> {
        t.checked_sub(self.graph.n_transactions()).and_then(|i| self.transient.get(i))
    }

    fn endpoint(&self, t: usize, d: Direction) -> Option<usize> {
        if self.severed.contains(&(d, t)) {
            return None;
        }
        match self.transient(t) {
            Some(x) => match d {
                Direction::Outgoing => x.source,
                Direction::Incoming => x.dest,
            },
            None => {
                if self.mask.is_some_and(|m| !m.contains(t, d)) {
                    None
                } else {
                    self.graph.txn_customer(t, d)
                }
            }
        }
    }

    pub fn is_active(&self, e: Edge) -> bool {
        self.endpoint(e.txn, e.direction) == Some(e.customer)
    }

    pub fn txn_features(&self, t: usize) -> &[f64] {
        match self.transient(t) {
            Some(x) => &x.features,
            None => self.graph.txn_features().row(t),
        }
    }

    /// Active neighbors of `dst` under `rel`, in ascending id order.
    pub fn neighbors(&self, rel: Relation, dst: usize) -> Vec<usize> {
        let d = rel.direction();
        match rel.dst_type() {
            NodeType::Transaction => self.endpoint(dst, d).into_iter().collect(),
            NodeType::Customer => {
                let base = match d {
                    Direction::Outgoing => self.graph.outgoing_txns(dst),
                    Direction::Incoming => self.graph.incoming_txns(dst),
                };
                let mut out: Vec<usize> = base
                    .iter()
                    .copied()
                    .filter(|&t| self.endpoint(t, d) == Some(dst))
                    .collect();
                let n_t = self.graph.n_transactions();
                for (i, _) in self.transient.iter().enumerate() {
                    if self.endpoint(n_t + i, d) == Some(dst) {
                        out.push(n_t + i);
                    }
                }
                out
            }
        }
    }
}

/// Edges of one relation inside a subgraph, as local node indices, sorted by `dst`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalAdjacency {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
}

impl LocalAdjacency {
    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }

    /// Number of leading edges whose destination is below `n_dst`.
    pub fn prefix(&self, n_dst: usize) -> usize {
        self.dst.partition_point(|&d| d < n_dst)
    }
}

/// Layered sample around a set of seed nodes.
///
/// Local node ids are assigned in discovery order, so the nodes within `h`
/// hops of the seeds are always a prefix of each type's node list.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub seed_edges: Vec<(usize, usize)>,
    seed_local: Vec<(usize, usize)>,
    customers: Vec<usize>,
    transactions: Vec<usize>,
    customer_hops: Vec<usize>,
    txn_hops: Vec<usize>,
    relations: [LocalAdjacency; 4],
    x_c: Tensor,
    x_t: Tensor,
}

impl Subgraph {
    pub fn depth(&self) -> usize {
        self.customer_hops.len() - 1
    }

    pub fn customers(&self) -> &[usize] {
        &self.customers
    }

    /// Local `(customer, transaction)` rows of each seed edge, in seed order.
    pub fn seed_rows(&self) -> &[(usize, usize)] {
        &self.seed_local
    }

    pub fn transactions(&self) -> &[usize] {
        &self.transactions
    }

    /// Number of nodes of `t` within `hop` hops of the seeds.
    pub fn within(&self, t: NodeType, hop: usize) -> usize {
        let hops = match t {
            NodeType::Customer => &self.customer_hops,
            NodeType::Transaction => &self.txn_hops,
        };
        hops[hop.min(hops.len() - 1)]
    }

    pub fn relation(&self, rel: Relation) -> &LocalAdjacency {
        &self.relations[rel.index()]
    }

    pub fn customer_features(&self) -> &Tensor {
        &self.x_c
    }

    pub fn txn_features(&self) -> &Tensor {
        &self.x_t
    }

    pub fn local_customer(&self, global: usize) -> Option<usize> {
        self.customers.iter().position(|&c| c == global)
    }

    pub fn local_txn(&self, global: usize) -> Option<usize> {
        self.transactions.iter().position(|&t| t == global)
    }

    /// Copy with the edges of `rel` listed in `order`, which must be a
    /// permutation that keeps destinations grouped in ascending order.
    pub fn reorder_edges(&self, rel: Relation, order: &[usize]) -> Result<Subgraph, GraphError> {
        let adj = &self.relations[rel.index()];
        let mut seen = vec![false; adj.len()];
        if order.len() != adj.len() || order.iter().any(|&i| i >= adj.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(GraphError::Config("edge order is not a permutation".into()));
        }
        let dst: Vec<usize> = order.iter().map(|&i| adj.dst[i]).collect();
        if dst.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::Config("edge order must keep destinations sorted".into()));
        }
        let mut out = self.clone();
        out.relations[rel.index()] = LocalAdjacency {
            src: order.iter().map(|&i| adj.src[i]).collect(),
            dst,
        };
        Ok(out)
    }

    /// Copy of this subgraph with the given transactions' edges of `direction`
    /// removed from both relations carrying that direction.
    pub fn sever_edges(&self, txns: &[usize], direction: Direction) -> Subgraph {
        let cut: HashSet<usize> = txns
            .iter()
            .filter_map(|&t| self.transactions.iter().position(|&x| x == t))
            .collect();
        let mut out = self.clone();
        for rel in Relation::ALL {
            if rel.direction() != direction {
                continue;
            }
            let adj = &self.relations[rel.index()];
            let txn_side = |i: usize| match rel.dst_type() {
                NodeType::Transaction => adj.dst[i],
                NodeType::Customer => adj.src[i],
            };
            let keep: Vec<usize> = (0..adj.len()).filter(|&i| !cut.contains(&txn_side(i))).collect();
            out.relations[rel.index()] = LocalAdjacency {
                dst: keep.iter().map(|&i| adj.dst[i]).collect(),
                src: keep.iter().map(|&i| adj.src[i]).collect(),
            };
        }
        out
    }

    /// Copy with the local feature rows of `node_type` replaced; adjacency is shared.
    pub fn with_features(&self, node_type: NodeType, features: Tensor) -> Result<Subgraph, GraphError> {
        let old = match node_type {
            NodeType::Customer => &self.x_c,
            NodeType::Transaction => &self.x_t,
        };
        if old.shape() != features.shape() {
            return Err(GraphError::Config(format!(
                "replacement features {:?} do not match {:?}",
                features.shape(),
                old.shape()
            )));
        }
        let mut out = self.clone();
        match node_type {
            NodeType::Customer => out.x_c = features,
            NodeType::Transaction => out.x_t = features,
        }
        Ok(out)
    }
}

/// Expands `layers` hops from the endpoints of `seed_edges`.
///
/// Every node is expanded once, the first time it is reached; per relation
/// it keeps `min(degree, fanout)` neighbors drawn uniformly without
/// replacement.
pub fn sample_neighborhood(
    view: &GraphView<'_>,
    seed_edges: &[(usize, usize)],
    fanout: usize,
    layers: usize,
    rng_seed: u64,
) -> Result<Subgraph, GraphError> {
    let customers: Vec<usize> = seed_edges.iter().map(|p| p.0).collect();
    let txns: Vec<usize> = seed_edges.iter().map(|p| p.1).collect();
    let mut sub = sample_from_nodes(view, &customers, &txns, fanout, layers, rng_seed)?;
    let c_local: HashMap<usize, usize> = sub.customers.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let t_local: HashMap<usize, usize> = sub.transactions.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    sub.seed_local = seed_edges.iter().map(|(c, t)| (c_local[c], t_local[t])).collect();
    sub.seed_edges = seed_edges.to_vec();
    Ok(sub)
}

/// Every node of the view as a seed, with no fanout cap.
pub fn full_subgraph(view: &GraphView<'_>, layers: usize) -> Result<Subgraph, GraphError> {
    let customers: Vec<usize> = (0..view.n_customers()).collect();
    let txns: Vec<usize> = (0..view.n_transactions()).collect();
    sample_from_nodes(view, &customers, &txns, usize::MAX, layers, 0)
}

/// Like [`sample_neighborhood`] but seeded with arbitrary node sets.
pub fn sample_from_nodes(
    view: &GraphView<'_>,
    seed_customers: &[usize],
    seed_txns: &[usize],
    fanout: usize,
    layers: usize,
    rng_seed: u64,
) -> Result<Subgraph, GraphError> {
    if fanout == 0 || layers == 0 {
        return Err(GraphError::Config("fanout and layer count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut c_local: HashMap<usize, usize> = HashMap::new();
    let mut t_local: HashMap<usize, usize> = HashMap::new();
    let mut customers = Vec::new();
    let mut transactions = Vec::new();
    for &c in seed_customers {
        if c >= view.n_customers() {
            return Err(GraphError::Config(format!("seed customer {c} out of range")));
        }
        c_local.entry(c).or_insert_with(|| {
            customers.push(c);
            customers.len() - 1
        });
    }
    for &t in seed_txns {
        if t >= view.n_transactions() {
            return Err(GraphError::Config(format!("seed transaction {t} out of range")));
        }
        t_local.entry(t).or_insert_with(|| {
            transactions.push(t);
            transactions.len() - 1
        });
    }
    let mut customer_hops = vec![customers.len()];
    let mut txn_hops = vec![transactions.len()];
    let mut relations: [LocalAdjacency; 4] = Default::default();

    let mut c_frontier = 0..customers.len();
    let mut t_frontier = 0..transactions.len();
    for _ in 0..layers {
        let (c_start, t_start) = (customers.len(), transactions.len());
        for local in c_frontier.clone() {
            let global = customers[local];
            for rel in Relation::into_type(NodeType::Customer) {
                for src in pick(view.neighbors(rel, global), fanout, &mut rng) {
                    let s = *t_local.entry(src).or_insert_with(|| {
                        transactions.push(src);
                        transactions.len() - 1
                    });
                    relations[rel.index()].dst.push(local);
                    relations[rel.index()].src.push(s);
                }
            }
        }
        for local in t_frontier.clone() {
            let global = transactions[local];
            for rel in Relation::into_type(NodeType::Transaction) {
                for src in pick(view.neighbors(rel, global), fanout, &mut rng) {
                    let s = *c_local.entry(src).or_insert_with(|| {
                        customers.push(src);
                        customers.len() - 1
                    });
                    relations[rel.index()].dst.push(local);
                    relations[rel.index()].src.push(s);
                }
            }
        }
        c_frontier = c_start..customers.len();
        t_frontier = t_start..transactions.len();
        customer_hops.push(customers.len());
        txn_hops.push(transactions.len());
    }

    let g = view.graph();
    let d_c = g.customer_dim();
    let d_t = g.txn_dim();
    let mut xc = Vec::with_capacity(customers.len() * d_c);
    for &c in &customers {
        xc.extend_from_slice(g.customer_features().row(c));
    }
    let mut xt = Vec::with_capacity(transactions.len() * d_t);
    for &t in &transactions {
        xt.extend_from_slice(view.txn_features(t));
    }
    Ok(Subgraph {
        seed_edges: Vec::new(),
        seed_local: Vec::new(),
        x_c: Tensor::matrix(customers.len(), d_c, xc)?,
        x_t: Tensor::matrix(transactions.len(), d_t, xt)?,
        customers,
        transactions,
        customer_hops,
        txn_hops,
        relations,
    })
}

fn pick(mut nbrs: Vec<usize>, fanout: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if nbrs.len() <= fanout {
        return nbrs;
    }
    let mut idx = index::sample(rng, nbrs.len(), fanout).into_vec();
    idx.sort_unstable();
    let picked = idx.iter().map(|&i| nbrs[i]).collect();
    nbrs.clear();
    picked
}

/// `count` customer/transaction pairs that are not edges of `direction` in `g`.
pub fn sample_negatives(
    g: &BipartiteGraph,
    count: usize,
    direction: Direction,
    rng_seed: u64,
) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_negatives_with(g, count, direction, &mut rng)
}

pub fn sample_negatives_with<R: Rng>(
    g: &BipartiteGraph,
    count: usize,
    direction: Direction,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, GraphError> {
    if count == 0 {
        return Err(GraphError::Config("negative sample count must be at least 1".into()));
    }
    let (n_c, n_t) = (g.n_customers(), g.n_transactions());
    if n_c == 0 || n_t == 0 {
        return Err(GraphError::Sampling("graph has no customers or transactions".into()));
    }
    let budget = 100 * count;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == budget {
            return Err(GraphError::Sampling(format!(
                "no non-edge found after {budget} attempts"
            )));
        }
        attempts += 1;
        let c = rng.random_range(0..n_c);
        let t = rng.random_range(0..n_t);
        if !g.has_edge(c, t, direction) {
            out.push((c, t));
        }
    }
    Ok(out)
}
