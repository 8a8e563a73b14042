//! The directed customer/transaction bipartite graph.
//!
//! Customers connect to every transaction they take part in. An outgoing
//! edge `c -> t` exists when `c` is the source of `t`, an incoming edge
//! `t -> c` when `c` is the destination. A transaction therefore has at
//! most one edge of each direction, which lets the graph store the
//! transaction side of every relation as an `Option<usize>`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::ndtensor::{read_f64, read_u32, read_u64, Tensor};

use super::ingest::{CustomerProfile, RawTransaction};
use super::split::{Direction, Edge};
use super::GraphError;

const SNAPSHOT_MAGIC: &[u8; 4] = b"AMLG";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    Customer,
    Transaction,
}

/// Message-passing relations. Messages flow from `src_type` to `dst_type`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    /// customer -> transaction over outgoing edges
    OutFwd,
    /// transaction -> customer, reverse of `OutFwd`
    OutRev,
    /// transaction -> customer over incoming edges
    InFwd,
    /// customer -> transaction, reverse of `InFwd`
    InRev,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::OutFwd, Relation::OutRev, Relation::InFwd, Relation::InRev];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn src_type(self) -> NodeType {
        match self {
            Relation::OutFwd | Relation::InRev => NodeType::Customer,
            Relation::OutRev | Relation::InFwd => NodeType::Transaction,
        }
    }

    pub fn dst_type(self) -> NodeType {
        match self.src_type() {
            NodeType::Customer => NodeType::Transaction,
            NodeType::Transaction => NodeType::Customer,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Relation::OutFwd | Relation::OutRev => Direction::Outgoing,
            Relation::InFwd | Relation::InRev => Direction::Incoming,
        }
    }

    /// Relations delivering messages into nodes of type `t`.
    pub fn into_type(t: NodeType) -> [Relation; 2] {
        match t {
            NodeType::Customer => [Relation::OutRev, Relation::InFwd],
            NodeType::Transaction => [Relation::OutFwd, Relation::InRev],
        }
    }
}

/// Compressed adjacency grouped by owner node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// Per-column standardization fitted when the graph is built.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[&[f64]], dim: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Immutable customer/transaction graph with standardized node features.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    customer_ids: Vec<String>,
    customer_index: HashMap<String, usize>,
    txn_ids: Vec<String>,
    timestamps: Vec<i64>,
    x_c: Tensor,
    x_t: Tensor,
    txn_source: Vec<Option<usize>>,
    txn_dest: Vec<Option<usize>>,
    cust_out: Csr,
    cust_in: Csr,
    customer_scaler: FeatureScaler,
    txn_scaler: FeatureScaler,
}

/// Builds the graph. Transactions keep their input order as node ids;
/// customers keep the order of `profiles`.
pub fn build_graph(transactions: &[RawTransaction], profiles: &[CustomerProfile]) -> Result<BipartiteGraph, GraphError> {
    let d_c = profiles.first().map_or(0, |p| p.features.len());
    let d_t = transactions.first().map_or(0, |t| t.features.len());
    let mut customer_index = HashMap::with_capacity(profiles.len());
    for (i, p) in profiles.iter().enumerate() {
        if p.features.len() != d_c {
            return Err(GraphError::Ingestion(format!(
                "profile {} has {} features, expected {d_c}",
                p.customer_id,
                p.features.len()
            )));
        }
        if customer_index.insert(p.customer_id.clone(), i).is_some() {
            return Err(GraphError::Ingestion(format!("duplicate customer id {}", p.customer_id)));
        }
    }
    let lookup = |party: &super::Party, txn: &str| -> Result<Option<usize>, GraphError> {
        match party.as_customer() {
            None => Ok(None),
            Some(id) => customer_index
                .get(id)
                .copied()
                .map(Some)
                .ok_or_else(|| GraphError::Ingestion(format!("transaction {txn} references customer {id} without a profile"))),
        }
    };

    let mut seen = HashMap::with_capacity(transactions.len());
    let mut txn_source = Vec::with_capacity(transactions.len());
    let mut txn_dest = Vec::with_capacity(transactions.len());
    for (i, t) in transactions.iter().enumerate() {
        if seen.insert(t.txn_id.as_str(), i).is_some() {
            return Err(GraphError::Ingestion(format!("duplicate transaction id {}", t.txn_id)));
        }
        if t.features.len() != d_t {
            return Err(GraphError::Ingestion(format!(
                "transaction {} has {} features, expected {d_t}",
                t.txn_id,
                t.features.len()
            )));
        }
        let s = lookup(&t.source, &t.txn_id)?;
        let d = lookup(&t.dest, &t.txn_id)?;
        if s.is_none() && d.is_none() {
            return Err(GraphError::Ingestion(format!("transaction {} has no known customer", t.txn_id)));
        }
        txn_source.push(s);
        txn_dest.push(d);
    }

    let customer_scaler = FeatureScaler::fit(&profiles.iter().map(|p| p.features.as_slice()).collect::<Vec<_>>(), d_c);
    let txn_scaler = FeatureScaler::fit(&transactions.iter().map(|t| t.features.as_slice()).collect::<Vec<_>>(), d_t);
    let x_c: Vec<f64> = profiles.iter().flat_map(|p| customer_scaler.apply(&p.features)).collect();
    let x_t: Vec<f64> = transactions.iter().flat_map(|t| txn_scaler.apply(&t.features)).collect();

    let mut g = BipartiteGraph {
        customer_ids: profiles.iter().map(|p| p.customer_id.clone()).collect(),
        customer_index,
        txn_ids: transactions.iter().map(|t| t.txn_id.clone()).collect(),
        timestamps: transactions.iter().map(|t| t.timestamp).collect(),
        x_c: Tensor::matrix(profiles.len(), d_c, x_c)?,
        x_t: Tensor::matrix(transactions.len(), d_t, x_t)?,
        txn_source,
        txn_dest,
        cust_out: Csr::default(),
        cust_in: Csr::default(),
        customer_scaler,
        txn_scaler,
    };
    g.materialize_reverse();
    Ok(g)
}

impl BipartiteGraph {
    fn materialize_reverse(&mut self) {
        let n_c = self.customer_ids.len();
        let mut out = vec![Vec::new(); n_c];
        let mut inc = vec![Vec::new(); n_c];
        for (t, s) in self.txn_source.iter().enumerate() {
            if let Some(c) = s {
                out[*c].push(t);
            }
        }
        for (t, d) in self.txn_dest.iter().enumerate() {
            if let Some(c) = d {
                inc[*c].push(t);
            }
        }
        self.cust_out = Csr::from_lists(&out);
        self.cust_in = Csr::from_lists(&inc);
    }

    pub fn n_customers(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn n_transactions(&self) -> usize {
        self.txn_ids.len()
    }

    pub fn customer_dim(&self) -> usize {
        self.x_c.cols()
    }

    pub fn txn_dim(&self) -> usize {
        self.x_t.cols()
    }

    pub fn customer_features(&self) -> &Tensor {
        &self.x_c
    }

    pub fn txn_features(&self) -> &Tensor {
        &self.x_t
    }

    pub fn customer_id(&self, c: usize) -> &str {
        &self.customer_ids[c]
    }

    pub fn customer_ids(&self) -> &[String] {
        &self.customer_ids
    }

    pub fn customer_index(&self, id: &str) -> Option<usize> {
        self.customer_index.get(id).copied()
    }

    pub fn txn_id(&self, t: usize) -> &str {
        &self.txn_ids[t]
    }

    pub fn txn_ids(&self) -> &[String] {
        &self.txn_ids
    }

    pub fn timestamp(&self, t: usize) -> i64 {
        self.timestamps[t]
    }

    pub fn customer_scaler(&self) -> &FeatureScaler {
        &self.customer_scaler
    }

    pub fn txn_scaler(&self) -> &FeatureScaler {
        &self.txn_scaler
    }

    /// Source customer of `t` (its outgoing edge), if any.
    pub fn txn_source(&self, t: usize) -> Option<usize> {
        self.txn_source[t]
    }

    /// Destination customer of `t` (its incoming edge), if any.
    pub fn txn_dest(&self, t: usize) -> Option<usize> {
        self.txn_dest[t]
    }

    pub fn txn_customer(&self, t: usize, direction: Direction) -> Option<usize> {
        match direction {
            Direction::Outgoing => self.txn_source[t],
            Direction::Incoming => self.txn_dest[t],
        }
    }

    pub fn has_edge(&self, c: usize, t: usize, direction: Direction) -> bool {
        self.txn_customer(t, direction) == Some(c)
    }

    pub fn outgoing_txns(&self, c: usize) -> &[usize] {
        self.cust_out.get(c)
    }

    pub fn incoming_txns(&self, c: usize) -> &[usize] {
        self.cust_in.get(c)
    }

    /// Neighbors of `dst` under `rel`, in ascending id order.
    pub fn neighbors(&self, rel: Relation, dst: usize) -> &[usize] {
        match rel {
            Relation::OutFwd => self.txn_source[dst].as_slice(),
            Relation::InRev => self.txn_dest[dst].as_slice(),
            Relation::OutRev => self.cust_out.get(dst),
            Relation::InFwd => self.cust_in.get(dst),
        }
    }

    pub fn n_edges(&self, direction: Direction) -> usize {
        match direction {
            Direction::Outgoing => self.cust_out.nnz(),
            Direction::Incoming => self.cust_in.nnz(),
        }
    }

    /// All edges of one direction, ordered by transaction id.
    pub fn edges(&self, direction: Direction) -> Vec<Edge> {
        (0..self.n_transactions())
            .filter_map(|t| {
                self.txn_customer(t, direction).map(|customer| Edge {
                    direction,
                    txn: t,
                    customer,
                })
            })
            .collect()
    }

    pub fn all_edges(&self) -> Vec<Edge> {
        let mut e = self.edges(Direction::Outgoing);
        e.extend(self.edges(Direction::Incoming));
        e
    }

    /// Checks that every reverse relation is the transpose of its forward one.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        let n_c = self.n_customers();
        for (direction, per_txn, csr) in [
            (Direction::Outgoing, &self.txn_source, &self.cust_out),
            (Direction::Incoming, &self.txn_dest, &self.cust_in),
        ] {
            if csr.len() != n_c {
                return Err(GraphError::Format(format!("{direction:?} adjacency has {} rows", csr.len())));
            }
            let forward = per_txn.iter().filter(|s| s.is_some()).count();
            if forward != csr.nnz() {
                return Err(GraphError::Format(format!("{direction:?} relation is not transposed")));
            }
            for c in 0..n_c {
                for &t in csr.get(c) {
                    if t >= per_txn.len() || per_txn[t] != Some(c) {
                        return Err(GraphError::Format(format!("{direction:?} relation is not transposed")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the versioned binary snapshot.
    ///
    /// Layout (little-endian): magic, version, `N_c`, `N_t`, `d_c`, `d_t`,
    /// both feature matrices, the four adjacencies (`OUT_FWD`, `OUT_REV`,
    /// `IN_FWD`, `IN_REV`), then ids, timestamps and scaler statistics.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<(), GraphError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in [self.n_customers(), self.n_transactions(), self.customer_dim(), self.txn_dim()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        self.x_c.write_to(w)?;
        self.x_t.write_to(w)?;
        write_optional(w, &self.txn_source)?;
        write_csr(w, &self.cust_out)?;
        write_csr(w, &self.cust_in)?;
        write_optional(w, &self.txn_dest)?;
        for ids in [&self.customer_ids, &self.txn_ids] {
            for id in ids.iter() {
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id.as_bytes())?;
            }
        }
        for ts in &self.timestamps {
            w.write_all(&ts.to_le_bytes())?;
        }
        for s in [&self.customer_scaler, &self.txn_scaler] {
            for v in s.mean.iter().chain(&s.std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self, GraphError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(GraphError::Format("not a graph snapshot".into()));
        }
        let version = read_u32(r)?;
        if version != SNAPSHOT_VERSION {
            return Err(GraphError::Format(format!("unsupported snapshot version {version}")));
        }
        let n_c = read_u64(r)? as usize;
        let n_t = read_u64(r)? as usize;
        let d_c = read_u64(r)? as usize;
        let d_t = read_u64(r)? as usize;
        let x_c = Tensor::read_from(r)?;
        let x_t = Tensor::read_from(r)?;
        if x_c.shape() != [n_c, d_c] || x_t.shape() != [n_t, d_t] {
            return Err(GraphError::Format("feature matrix shape disagrees with header".into()));
        }
        let txn_source = read_optional(r, n_t, n_c)?;
        let cust_out = read_csr(r)?;
        let cust_in = read_csr(r)?;
        let txn_dest = read_optional(r, n_t, n_c)?;
        let mut read_ids = |n: usize| -> Result<Vec<String>, GraphError> {
            (0..n)
                .map(|_| {
                    let len = read_u32(r)? as usize;
                    let mut b = vec![0u8; len];
                    r.read_exact(&mut b)?;
                    String::from_utf8(b).map_err(|e| GraphError::Format(e.to_string()))
                })
                .collect()
        };
        let customer_ids = read_ids(n_c)?;
        let txn_ids = read_ids(n_t)?;
        let timestamps = (0..n_t)
            .map(|_| read_u64(r).map(|v| v as i64))
            .collect::<Result<Vec<_>, _>>()?;
        let mut read_scaler = |d: usize| -> Result<FeatureScaler, GraphError> {
            let vals = (0..2 * d).map(|_| read_f64(r)).collect::<Result<Vec<_>, _>>()?;
            Ok(FeatureScaler {
                mean: vals[..d].to_vec(),
                std: vals[d..].to_vec(),
            })
        };
        let customer_scaler = read_scaler(d_c)?;
        let txn_scaler = read_scaler(d_t)?;
        let customer_index = customer_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let g = BipartiteGraph {
            customer_ids,
            customer_index,
            txn_ids,
            timestamps,
            x_c,
            x_t,
            txn_source,
            txn_dest,
            cust_out,
            cust_in,
            customer_scaler,
            txn_scaler,
        };
        g.check_invariants()?;
        Ok(g)
    }
}

fn write_optional<W: Write>(w: &mut W, v: &[Option<usize>]) -> std::io::Result<()> {
    for x in v {
        let raw = x.map_or(u64::MAX, |c| c as u64);
        w.write_all(&raw.to_le_bytes())?;
    }
    Ok(())
}

fn read_optional<R: Read>(r: &mut R, n: usize, bound: usize) -> Result<Vec<Option<usize>>, GraphError> {
    (0..n)
        .map(|_| {
            let raw = read_u64(r)?;
            if raw == u64::MAX {
                Ok(None)
            } else if (raw as usize) < bound {
                Ok(Some(raw as usize))
            } else {
                Err(GraphError::Format(format!("customer index {raw} out of range")))
            }
        })
        .collect()
}

fn write_csr<W: Write>(w: &mut W, csr: &Csr) -> std::io::Result<()> {
    w.write_all(&(csr.offsets.len() as u64).to_le_bytes())?;
    for &o in &csr.offsets {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    w.write_all(&(csr.targets.len() as u64).to_le_bytes())?;
    for &t in &csr.targets {
        w.write_all(&(t as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_csr<R: Read>(r: &mut R) -> Result<Csr, GraphError> {
    let n = read_u64(r)? as usize;
    let offsets = (0..n).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let m = read_u64(r)? as usize;
    let targets = (0..m).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    if offsets.first() != Some(&0) || offsets.last() != Some(&m) || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(GraphError::Format("corrupt adjacency offsets".into()));
    }
    Ok(Csr { offsets, targets })
}
