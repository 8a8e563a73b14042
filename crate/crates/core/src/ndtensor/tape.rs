//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output and the inputs it read.
//! Because a node can only reference nodes that already exist, the tape is
//! topologically ordered by construction and [`Tape::backward`] is a single
//! reverse sweep.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{mm, mm_nt, mm_tn, Tensor};
use super::TensorError;

/// Epsilon used by batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Running statistics momentum used by batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;
/// Probability clamp applied inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Dropout(Var, Rc<Vec<f64>>),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    ScaleRows(Var, Rc<Vec<f64>>),
    SegmentSoftmax(Var, Rc<Vec<usize>>, usize),
    HeadDot(Var, Var),
    HeadScale(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Bce(Var, Rc<Vec<f64>>),
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased per-column variance.
    pub var: Vec<f64>,
}

/// Running statistics carried between batch-norm calls.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (m, b) in self.mean.iter_mut().zip(&batch.mean) {
            *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * b;
        }
        for (v, b) in self.var.iter_mut().zip(&batch.var) {
            *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * b;
        }
    }
}

/// Gradients produced by one backward sweep, keyed by leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf recorded with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Operation recorder. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn dim_err(op: &str, detail: String) -> TensorError {
    TensorError::Dimension(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input. Gradients are kept for it when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor) -> Var {
        let needs_grad = value.requires_grad();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value.with_grad(false))
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value.with_grad(true))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone().with_grad(false)
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op_name(&op).into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|v| nodes[v.0].needs_grad);
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?
        };
        self.push(out, op, &[x])
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = (ta.rows(), ta.cols());
            let (k2, n) = (tb.rows(), tb.cols());
            if k != k2 {
                return Err(dim_err(
                    "matmul",
                    format!("{:?} x {:?}", ta.shape(), tb.shape()),
                ));
            }
            Tensor::matrix(m, n, mm(ta.data(), tb.data(), m, k, n))?
        };
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn zip(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip(a, b, "hadamard", |x, y| x * y)?;
        self.push(out, Op::Hadamard(a, b), &[a, b])
    }

    /// Adds a `1 x d` (or `[d]`) row to every row of `x`.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (tx, tr) = (&nodes[x.0].value, &nodes[row.0].value);
            let d = tx.cols();
            if tr.len() != d {
                return Err(dim_err("add_row", format!("{:?} + {:?}", tx.shape(), tr.shape())));
            }
            let mut data = tx.data().to_vec();
            for r in data.chunks_mut(d.max(1)) {
                for (o, b) in r.iter_mut().zip(tr.data()) {
                    *o += b;
                }
            }
            Tensor::new(tx.shape().to_vec(), data)?
        };
        self.push(out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn relu(&self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Inverted dropout. Identity in [`Mode::Eval`] or when `p == 0`.
    pub fn dropout(&self, x: Var, p: f64, seed: u64, mode: Mode) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Usage(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let n = self.nodes.borrow()[x.0].value.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Tensor::new(t.shape().to_vec(), data)?
        };
        self.push(out, Op::Dropout(x, Rc::new(mask)), &[x])
    }

    /// Concatenates rank-2 tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        if xs.is_empty() || axis > 1 {
            return Err(TensorError::Usage("concat needs inputs and axis 0 or 1".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = xs.iter().map(|v| &nodes[v.0].value).collect();
            if axis == 0 {
                let cols = ts[0].cols();
                if ts.iter().any(|t| t.cols() != cols) {
                    return Err(dim_err("concat", "column counts differ".into()));
                }
                let rows = ts.iter().map(|t| t.rows()).sum();
                let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
                Tensor::matrix(rows, cols, data)?
            } else {
                let rows = ts[0].rows();
                if ts.iter().any(|t| t.rows() != rows) {
                    return Err(dim_err("concat", "row counts differ".into()));
                }
                let cols: usize = ts.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for t in &ts {
                        data.extend_from_slice(t.row(i));
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
        };
        self.push(out, Op::Concat(xs.to_vec(), axis), xs)
    }

    /// `out[e] = x[index[e]]`.
    pub fn gather_rows(&self, x: Var, index: Rc<Vec<usize>>) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (n, d) = (t.rows(), t.cols());
            let mut data = Vec::with_capacity(index.len() * d);
            for &i in index.iter() {
                if i >= n {
                    return Err(dim_err("gather_rows", format!("row {i} of {n}")));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(index.len(), d, data)?
        };
        self.push(out, Op::GatherRows(x, index), &[x])
    }

    /// `out[index[e]] += x[e]`, producing `n_out` rows.
    pub fn scatter_add_rows(&self, x: Var, index: Rc<Vec<usize>>, n_out: usize) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            if t.rows() != index.len() {
                return Err(dim_err("scatter_add_rows", format!("{} rows, {} ids", t.rows(), index.len())));
            }
            let d = t.cols();
            let mut data = vec![0.0; n_out * d];
            for (e, &i) in index.iter().enumerate() {
                if i >= n_out {
                    return Err(dim_err("scatter_add_rows", format!("segment {i} of {n_out}")));
                }
                for (o, v) in data[i * d..(i + 1) * d].iter_mut().zip(t.row(e)) {
                    *o += v;
                }
            }
            Tensor::matrix(n_out, d, data)?
        };
        self.push(out, Op::ScatterAddRows(x, index), &[x])
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&self, x: Var, factors: Rc<Vec<f64>>) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            if t.rows() != factors.len() {
                return Err(dim_err("scale_rows", format!("{} rows, {} factors", t.rows(), factors.len())));
            }
            let d = t.cols();
            let mut data = t.data().to_vec();
            for (r, f) in data.chunks_mut(d.max(1)).zip(factors.iter()) {
                r.iter_mut().for_each(|v| *v *= f);
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        self.push(out, Op::ScaleRows(x, factors), &[x])
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&self, x: Var, segments: Rc<Vec<usize>>, n_segments: usize) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            if t.rows() != segments.len() {
                return Err(dim_err("segment_softmax", format!("{} rows, {} ids", t.rows(), segments.len())));
            }
            if let Some(&s) = segments.iter().find(|&&s| s >= n_segments) {
                return Err(dim_err("segment_softmax", format!("segment {s} of {n_segments}")));
            }
            let d = t.cols();
            let mut max = vec![f64::NEG_INFINITY; n_segments * d];
            for (e, &s) in segments.iter().enumerate() {
                for (m, &v) in max[s * d..(s + 1) * d].iter_mut().zip(t.row(e)) {
                    *m = m.max(v);
                }
            }
            let mut data = vec![0.0; t.len()];
            let mut denom = vec![0.0; n_segments * d];
            for (e, &s) in segments.iter().enumerate() {
                for c in 0..d {
                    let v = (t.get(e, c) - max[s * d + c]).exp();
                    data[e * d + c] = v;
                    denom[s * d + c] += v;
                }
            }
            for (e, &s) in segments.iter().enumerate() {
                for c in 0..d {
                    data[e * d + c] /= denom[s * d + c];
                }
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        self.push(out, Op::SegmentSoftmax(x, segments, n_segments), &[x])
    }

    /// Per-head dot product: `h` is `n x (K*d)`, `a` is `K x d`, output `n x K`.
    pub fn head_dot(&self, h: Var, a: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (th, ta) = (&nodes[h.0].value, &nodes[a.0].value);
            let (k, d) = (ta.rows(), ta.cols());
            if th.cols() != k * d {
                return Err(dim_err("head_dot", format!("{:?} . {:?}", th.shape(), ta.shape())));
            }
            let n = th.rows();
            let mut data = vec![0.0; n * k];
            for i in 0..n {
                let row = th.row(i);
                for head in 0..k {
                    data[i * k + head] = row[head * d..(head + 1) * d]
                        .iter()
                        .zip(ta.row(head))
                        .map(|(x, y)| x * y)
                        .sum();
                }
            }
            Tensor::matrix(n, k, data)?
        };
        self.push(out, Op::HeadDot(h, a), &[h, a])
    }

    /// Per-head row scaling: `v` is `n x (K*d)`, `alpha` is `n x K`.
    pub fn head_scale(&self, v: Var, alpha: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let (tv, ta) = (&nodes[v.0].value, &nodes[alpha.0].value);
            let (n, k) = (ta.rows(), ta.cols());
            if tv.rows() != n || k == 0 || tv.cols() % k != 0 {
                return Err(dim_err("head_scale", format!("{:?} * {:?}", tv.shape(), ta.shape())));
            }
            let d = tv.cols() / k;
            let mut data = tv.data().to_vec();
            for i in 0..n {
                for head in 0..k {
                    let w = ta.get(i, head);
                    let base = i * k * d + head * d;
                    data[base..base + d].iter_mut().for_each(|x| *x *= w);
                }
            }
            Tensor::new(tv.shape().to_vec(), data)?
        };
        self.push(out, Op::HeadScale(v, alpha), &[v, alpha])
    }

    /// Batch normalization of an `n x d` input.
    ///
    /// In [`Mode::Train`] the input is normalized with its own statistics,
    /// which are returned so the caller can fold them into `running`.
    /// In [`Mode::Eval`] the running statistics are used.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>), TensorError> {
        let (out, op, stats) = {
            let nodes = self.nodes.borrow();
            let (t, tg, tb) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let (n, d) = (t.rows(), t.cols());
            if tg.len() != d || tb.len() != d || running.mean.len() != d {
                return Err(dim_err("batch_norm", format!("input {:?}, scale {:?}", t.shape(), tg.shape())));
            }
            let (mean, inv_std, stats) = match mode {
                Mode::Train => {
                    if n < 2 {
                        return Err(TensorError::BatchSize(n));
                    }
                    let mut mean = vec![0.0; d];
                    for i in 0..n {
                        for (m, v) in mean.iter_mut().zip(t.row(i)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    let mut var = vec![0.0; d];
                    for i in 0..n {
                        for ((s, v), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    let inv_std = var.iter().map(|s| 1.0 / (s / n as f64 + BN_EPS).sqrt()).collect();
                    let unbiased = var.iter().map(|s| s / (n - 1) as f64).collect();
                    let stats = BatchStats {
                        mean: mean.clone(),
                        var: unbiased,
                    };
                    (mean, inv_std, Some(stats))
                }
                Mode::Eval => (
                    running.mean.clone(),
                    running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect::<Vec<_>>(),
                    None,
                ),
            };
            let mut xhat = vec![0.0; n * d];
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                for c in 0..d {
                    let h = (t.get(i, c) - mean[c]) * inv_std[c];
                    xhat[i * d + c] = h;
                    data[i * d + c] = tg.data()[c] * h + tb.data()[c];
                }
            }
            let op = Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            };
            (Tensor::new(t.shape().to_vec(), data)?, op, stats)
        };
        Ok((self.push(out, op, &[x, gamma, beta])?, stats))
    }

    /// Sum of element-wise binary cross-entropies between `pred` and 0/1 `targets`.
    ///
    /// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_sum(&self, pred: Var, targets: Rc<Vec<f64>>) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[pred.0].value;
            if t.len() != targets.len() {
                return Err(dim_err("bce", format!("{} predictions, {} targets", t.len(), targets.len())));
            }
            let loss: f64 = t
                .data()
                .iter()
                .zip(targets.iter())
                .map(|(&p, &y)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            Tensor::scalar(loss)
        };
        self.push(out, Op::Bce(pred, targets), &[pred])
    }

    /// Mean binary cross-entropy.
    pub fn bce(&self, pred: Var, targets: Rc<Vec<f64>>) -> Result<Var, TensorError> {
        let n = targets.len().max(1);
        let s = self.bce_sum(pred, targets)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum(&self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.nodes.borrow()[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&self, x: Var) -> Result<Var, TensorError> {
        let n = self.nodes.borrow()[x.0].value.len().max(1);
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Column means of an `n x d` input, as `1 x d`.
    pub fn mean_rows(&self, x: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (n, d) = (t.rows(), t.cols());
            if n == 0 {
                return Err(dim_err("mean_rows", "no rows".into()));
            }
            let mut data = vec![0.0; d];
            for i in 0..n {
                for (o, v) in data.iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            data.iter_mut().for_each(|v| *v /= n as f64);
            Tensor::matrix(1, d, data)?
        };
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn transpose(&self, x: Var) -> Result<Var, TensorError> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (n, d) = (t.rows(), t.cols());
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    data[j * n + i] = t.get(i, j);
                }
            }
            Tensor::matrix(d, n, data)?
        };
        self.push(out, Op::Transpose(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients accumulate across fan-out and start from zero on every call.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if wants(*a) {
                        let da = mm_nt(&g, tb.data(), m, n, k);
                        accumulate(&mut grads, *a, &da);
                    }
                    if wants(*b) {
                        let db = mm_tn(ta.data(), &g, m, k, n);
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::AddRow(x, row) => {
                    if wants(*x) {
                        accumulate(&mut grads, *x, &g);
                    }
                    if wants(*row) {
                        let d = val(*row).len();
                        let mut dr = vec![0.0; d];
                        for r in g.chunks(d.max(1)) {
                            dr.iter_mut().zip(r).for_each(|(o, v)| *o += v);
                        }
                        accumulate(&mut grads, *row, &dr);
                    }
                }
                Op::Hadamard(a, b) => {
                    if wants(*a) {
                        let d: Vec<f64> = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, &d);
                    }
                    if wants(*b) {
                        let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, &d);
                    }
                }
                Op::Scale(x, c) => {
                    let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::Relu(x) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::LeakyRelu(x, slope) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                        .collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::Sigmoid(x) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::Dropout(x, mask) => {
                    let d: Vec<f64> = g.iter().zip(mask.iter()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::Concat(xs, axis) => {
                    if *axis == 0 {
                        let mut offset = 0;
                        for x in xs {
                            let len = val(*x).len();
                            if wants(*x) {
                                accumulate(&mut grads, *x, &g[offset..offset + len]);
                            }
                            offset += len;
                        }
                    } else {
                        let total = node.value.cols();
                        let rows = node.value.rows();
                        let mut col = 0;
                        for x in xs {
                            let c = val(*x).cols();
                            if wants(*x) {
                                let mut d = Vec::with_capacity(rows * c);
                                for r in 0..rows {
                                    d.extend_from_slice(&g[r * total + col..r * total + col + c]);
                                }
                                accumulate(&mut grads, *x, &d);
                            }
                            col += c;
                        }
                    }
                }
                Op::GatherRows(x, index) => {
                    let tx = val(*x);
                    let d = tx.cols();
                    let mut dx = vec![0.0; tx.len()];
                    for (e, &r) in index.iter().enumerate() {
                        for (o, v) in dx[r * d..(r + 1) * d].iter_mut().zip(&g[e * d..(e + 1) * d]) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ScatterAddRows(x, index) => {
                    let d = node.value.cols();
                    let mut dx = Vec::with_capacity(index.len() * d);
                    for &r in index.iter() {
                        dx.extend_from_slice(&g[r * d..(r + 1) * d]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ScaleRows(x, factors) => {
                    let d = node.value.cols();
                    let mut dx = g.clone();
                    for (r, f) in dx.chunks_mut(d.max(1)).zip(factors.iter()) {
                        r.iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SegmentSoftmax(x, segments, n_segments) => {
                    let y = node.value.data();
                    let d = node.value.cols();
                    let mut dot = vec![0.0; n_segments * d];
                    for (e, &s) in segments.iter().enumerate() {
                        for c in 0..d {
                            dot[s * d + c] += g[e * d + c] * y[e * d + c];
                        }
                    }
                    let mut dx = vec![0.0; y.len()];
                    for (e, &s) in segments.iter().enumerate() {
                        for c in 0..d {
                            dx[e * d + c] = y[e * d + c] * (g[e * d + c] - dot[s * d + c]);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::HeadDot(h, a) => {
                    let (th, ta) = (val(*h), val(*a));
                    let (k, d) = (ta.rows(), ta.cols());
                    let n = th.rows();
                    if wants(*h) {
                        let mut dh = vec![0.0; th.len()];
                        for i in 0..n {
                            for head in 0..k {
                                let gv = g[i * k + head];
                                let base = i * k * d + head * d;
                                for (o, av) in dh[base..base + d].iter_mut().zip(ta.row(head)) {
                                    *o = gv * av;
                                }
                            }
                        }
                        accumulate(&mut grads, *h, &dh);
                    }
                    if wants(*a) {
                        let mut da = vec![0.0; ta.len()];
                        for i in 0..n {
                            let row = th.row(i);
                            for head in 0..k {
                                let gv = g[i * k + head];
                                for (o, hv) in da[head * d..(head + 1) * d]
                                    .iter_mut()
                                    .zip(&row[head * d..(head + 1) * d])
                                {
                                    *o += gv * hv;
                                }
                            }
                        }
                        accumulate(&mut grads, *a, &da);
                    }
                }
                Op::HeadScale(v, alpha) => {
                    let (tv, ta) = (val(*v), val(*alpha));
                    let (n, k) = (ta.rows(), ta.cols());
                    let d = tv.cols() / k;
                    if wants(*v) {
                        let mut dv = g.clone();
                        for i in 0..n {
                            for head in 0..k {
                                let w = ta.get(i, head);
                                let base = i * k * d + head * d;
                                dv[base..base + d].iter_mut().for_each(|x| *x *= w);
                            }
                        }
                        accumulate(&mut grads, *v, &dv);
                    }
                    if wants(*alpha) {
                        let mut da = vec![0.0; ta.len()];
                        for i in 0..n {
                            for head in 0..k {
                                let base = i * k * d + head * d;
                                da[i * k + head] = g[base..base + d]
                                    .iter()
                                    .zip(&tv.data()[base..base + d])
                                    .map(|(x, y)| x * y)
                                    .sum();
                            }
                        }
                        accumulate(&mut grads, *alpha, &da);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let n = val(*x).rows();
                    let d = val(*x).cols();
                    let tg = val(*gamma).data();
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for i in 0..n {
                        for c in 0..d {
                            dgamma[c] += g[i * d + c] * xhat[i * d + c];
                            dbeta[c] += g[i * d + c];
                        }
                    }
                    if wants(*x) {
                        let mut dx = vec![0.0; n * d];
                        if *batch_stats {
                            let nf = n as f64;
                            for c in 0..d {
                                // dxhat = g * gamma; sums over the batch
                                let sum_dxhat = dbeta[c] * tg[c];
                                let sum_dxhat_xhat = dgamma[c] * tg[c];
                                for i in 0..n {
                                    let dxhat = g[i * d + c] * tg[c];
                                    dx[i * d + c] = inv_std[c] / nf
                                        * (nf * dxhat - sum_dxhat - xhat[i * d + c] * sum_dxhat_xhat);
                                }
                            }
                        } else {
                            for i in 0..n {
                                for c in 0..d {
                                    dx[i * d + c] = g[i * d + c] * tg[c] * inv_std[c];
                                }
                            }
                        }
                        accumulate(&mut grads, *x, &dx);
                    }
                    if wants(*gamma) {
                        accumulate(&mut grads, *gamma, &dgamma);
                    }
                    if wants(*beta) {
                        accumulate(&mut grads, *beta, &dbeta);
                    }
                }
                Op::Bce(pred, targets) => {
                    let d: Vec<f64> = val(*pred)
                        .data()
                        .iter()
                        .zip(targets.iter())
                        .map(|(&p, &y)| {
                            if p < BCE_EPS || p > 1.0 - BCE_EPS {
                                0.0
                            } else {
                                g[0] * (p - y) / (p * (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, &d);
                }
                Op::Sum(x) => {
                    let d = vec![g[0]; val(*x).len()];
                    accumulate(&mut grads, *x, &d);
                }
                Op::MeanRows(x) => {
                    let tx = val(*x);
                    let n = tx.rows();
                    let mut d = Vec::with_capacity(tx.len());
                    for _ in 0..n {
                        d.extend(g.iter().map(|v| v / n as f64));
                    }
                    accumulate(&mut grads, *x, &d);
                }
                Op::Transpose(x) => {
                    let tx = val(*x);
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..d {
                            dx[i * d + j] = g[j * n + i];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Hadamard(..) => "hadamard",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Dropout(..) => "dropout",
        Op::Concat(..) => "concat",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterAddRows(..) => "scatter_add_rows",
        Op::ScaleRows(..) => "scale_rows",
        Op::SegmentSoftmax(..) => "segment_softmax",
        Op::HeadDot(..) => "head_dot",
        Op::HeadScale(..) => "head_scale",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Bce(..) => "bce",
        Op::Sum(..) => "sum",
        Op::MeanRows(..) => "mean_rows",
        Op::Transpose(..) => "transpose",
    }
}
