use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{
    sample_negatives_with, sample_neighborhood, BipartiteGraph, Direction, Edge, EdgeMask, EdgeSplit, GraphView,
    Subgraph,
};
use crate::model::{Bound, Model, ModelError};
use crate::ndtensor::{BatchStats, Mode, Tape, TensorError, Var};

use super::{Adam, TrainingConfig, TrainingError};

const TRAIN_SALT: u64 = 0x7472_6169_6e00_0001;
const VALIDATION_SALT: u64 = 0x7661_6c69_6400_0002;

/// `(sum_b -ln y_pos - sum_{b,m} ln(1 - y_neg)) / B` with `B` the number of positives.
pub fn link_loss(tape: &Tape, pos: Var, neg: Var) -> Result<Var, TensorError> {
    let b = tape.value(pos).len();
    let m = tape.value(neg).len();
    if b == 0 {
        return Err(TensorError::Usage("link loss needs at least one positive".into()));
    }
    let lp = tape.bce_sum(pos, Rc::new(vec![1.0; b]))?;
    let ln = tape.bce_sum(neg, Rc::new(vec![0.0; m]))?;
    tape.scale(tape.add(lp, ln)?, 1.0 / b as f64)
}

/// A supervision batch with its negatives and the sampled neighborhood.
pub struct PreparedBatch {
    pub direction: Direction,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// Seeds are the positive pairs followed by the negative pairs.
    pub subgraph: Subgraph,
}

/// Draws negatives, severs the predicted direction of every transaction in
/// the batch from the message graph, and samples the neighborhood.
pub fn prepare_batch(
    graph: &BipartiteGraph,
    mask: &EdgeMask,
    batch: &[Edge],
    config: &TrainingConfig,
    seed: u64,
) -> Result<PreparedBatch, TrainingError> {
    let direction = match batch.first() {
        Some(e) => e.direction,
        None => return Err(TrainingError::Config("empty supervision batch".into())),
    };
    if batch.iter().any(|e| e.direction != direction) {
        return Err(TrainingError::Config("a batch must hold one edge direction".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negatives_with(graph, batch.len() * config.negatives, direction, &mut rng)?;
    let positives: Vec<(usize, usize)> = batch.iter().map(|e| (e.customer, e.txn)).collect();
    let mut view = GraphView::masked(graph, mask);
    for &(_, t) in positives.iter().chain(&negatives) {
        view.sever(t, direction);
    }
    let pairs: Vec<(usize, usize)> = positives.iter().chain(&negatives).copied().collect();
    let subgraph = sample_neighborhood(&view, &pairs, config.fanout, config.layers, rng.random())?;
    Ok(PreparedBatch {
        direction,
        positives,
        negatives,
        subgraph,
    })
}

type Forward = (Var, Var, Vec<(usize, BatchStats)>);

/// Predictions for the positive and negative seeds of a prepared batch.
fn forward(
    model: &Model,
    tape: &Tape,
    bound: &Bound,
    batch: &PreparedBatch,
    mode: Mode,
    dropout_seed: u64,
) -> Result<Forward, ModelError> {
    let enc = model.encode(tape, bound, &batch.subgraph, mode, dropout_seed)?;
    let rows = batch.subgraph.seed_rows();
    let (pos, neg) = rows.split_at(batch.positives.len());
    let pick = |rows: &[(usize, usize)]| -> Result<Var, ModelError> {
        let zc = tape.gather_rows(enc.customers, Rc::new(rows.iter().map(|r| r.0).collect()))?;
        let zt = tape.gather_rows(enc.transactions, Rc::new(rows.iter().map(|r| r.1).collect()))?;
        model.decode(tape, bound, zc, zt)
    };
    Ok((pick(pos)?, pick(neg)?, enc.batch_stats))
}

/// One optimization step on a batch of same-direction supervision edges.
///
/// `encoder_mode` is [`Mode::Train`] for joint training; a frozen encoder
/// runs in [`Mode::Eval`].
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    graph: &BipartiteGraph,
    mask: &EdgeMask,
    batch: &[Edge],
    config: &TrainingConfig,
    seed: u64,
    encoder_mode: Mode,
) -> Result<f64, TrainingError> {
    let prepared = prepare_batch(graph, mask, batch, config, seed)?;
    let tape = Tape::new();
    let bound = model.params().bind(&tape);
    let (pos, neg, stats) = forward(model, &tape, &bound, &prepared, encoder_mode, seed)?;
    let loss = link_loss(&tape, pos, neg)?;
    let mut grads = tape.backward(loss)?;
    let g: Vec<_> = model.params().ids().map(|id| grads.take(bound.var(id))).collect();
    adam.step(model.params_mut(), &g);
    model.apply_batch_stats(&stats);
    Ok(tape.item(loss))
}

/// Mean link loss per positive over `edges`, in inference mode.
///
/// Negatives and neighborhoods depend only on `seed`, so repeated calls
/// compare like with like.
pub fn evaluation_loss(
    model: &Model,
    graph: &BipartiteGraph,
    mask: &EdgeMask,
    edges: &[Edge],
    config: &TrainingConfig,
    seed: u64,
) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, direction) in Direction::BOTH.into_iter().enumerate() {
        let own: Vec<Edge> = edges.iter().filter(|e| e.direction == direction).copied().collect();
        for (j, chunk) in own.chunks(config.batch_size).enumerate() {
            let s = seed.wrapping_add(((k as u64) << 32) | j as u64);
            let prepared = prepare_batch(graph, mask, chunk, config, s)?;
            let tape = Tape::new();
            let bound = model.params().bind_constant(&tape);
            let (pos, neg, _) = forward(model, &tape, &bound, &prepared, Mode::Eval, 0)?;
            total += tape.item(link_loss(&tape, pos, neg)?) * chunk.len() as f64;
            count += chunk.len();
        }
    }
    if count == 0 {
        return Err(TrainingError::Config("no edges to evaluate".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct FitResult {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains a fresh model built from `config`.
pub fn fit(graph: &BipartiteGraph, split: &EdgeSplit, config: &TrainingConfig) -> Result<FitResult, TrainingError> {
    config.validate()?;
    let model = Model::new(config.encoder(), graph.customer_dim(), graph.txn_dim(), config.seed)?;
    fit_model(model, graph, split, config, Mode::Train, &mut |_| {})
}

/// Trains `model` with early stopping on validation loss.
///
/// Each epoch visits every supervision edge once, in batches that alternate
/// between outgoing and incoming edges while both have some left.
pub fn fit_model(
    mut model: Model,
    graph: &BipartiteGraph,
    split: &EdgeSplit,
    config: &TrainingConfig,
    encoder_mode: Mode,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult, TrainingError> {
    config.validate()?;
    if split.supervision.is_empty() {
        return Err(TrainingError::Config("supervision set is empty".into()));
    }
    if split.validation.is_empty() {
        return Err(TrainingError::Config("validation set is empty".into()));
    }
    let mask = EdgeMask::from_edges(graph, &split.message);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ TRAIN_SALT);
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut sup = Direction::BOTH.map(|d| split.supervision_in(d));
    let val_seed = config.seed ^ VALIDATION_SALT;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        for edges in sup.iter_mut() {
            edges.shuffle(&mut rng);
        }
        let batches = interleave(&sup, config.batch_size);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (step, batch) in batches.into_iter().enumerate() {
            let seed = rng.random();
            let loss = train_step(&mut model, &mut adam, graph, &mask, batch, config, seed, encoder_mode)
                .map_err(|e| e.locate(epoch, step))?;
            sum += loss * batch.len() as f64;
            n += batch.len();
        }
        let val_loss = evaluation_loss(&model, graph, &mask, &split.validation, config, val_seed)
            .map_err(|e| e.locate(epoch, usize::MAX))?;
        let record = EpochRecord {
            epoch,
            train_loss: sum / n as f64,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch runs");
    Ok(FitResult {
        model,
        history,
        best_epoch,
    })
}

/// Batches of each direction, alternating outgoing and incoming.
fn interleave(sup: &[Vec<Edge>; 2], batch_size: usize) -> Vec<&[Edge]> {
    let mut a = sup[0].chunks(batch_size);
    let mut b = sup[1].chunks(batch_size);
    let mut out = Vec::new();
    loop {
        let (x, y) = (a.next(), b.next());
        if x.is_none() && y.is_none() {
            return out;
        }
        out.extend(x);
        out.extend(y);
    }
}
