use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::testutil::{profile, random_graph, random_records, txn};
use crate::graph::{
    build_graph, full_subgraph, split_edges, Direction, Edge, EdgeMask, GraphView, Party, Relation, SplitRatios,
};
use crate::model::{EncoderKind, Model, ParamStore};
use crate::ndtensor::{Mode, Tape, Tensor};

fn small_config() -> TrainingConfig {
    TrainingConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        learning_rate: 0.01,
        batch_size: 16,
        fanout: 8,
        max_epochs: 4,
        patience: 2,
        seed: 5,
        ..TrainingConfig::defaults(EncoderKind::Gat)
    }
}

fn column(tape: &Tape, v: &[f64]) -> crate::ndtensor::Var {
    tape.constant(Tensor::matrix(v.len(), 1, v.to_vec()).unwrap())
}

#[test]
fn link_loss_examples() {
    let tape = Tape::new();
    let l = link_loss(&tape, column(&tape, &[0.5]), column(&tape, &[0.5])).unwrap();
    assert!((tape.item(l) - 2.0 * 2f64.ln()).abs() < 1e-12);
    let l = link_loss(&tape, column(&tape, &[1.0 - 1e-12]), column(&tape, &[1e-12])).unwrap();
    assert!(tape.item(l) < 1e-6);
}

proptest! {
    #[test]
    fn link_loss_matches_direct_sum(seed in 0u64..10_000, b in 1usize..20, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<f64> = (0..b).map(|_| rng.random_range(0.01..0.99)).collect();
        let neg: Vec<f64> = (0..b * m).map(|_| rng.random_range(0.01..0.99)).collect();
        let tape = Tape::new();
        let l = tape.item(link_loss(&tape, column(&tape, &pos), column(&tape, &neg)).unwrap());
        let direct = (pos.iter().map(|p| -p.ln()).sum::<f64>() + neg.iter().map(|q| -(1.0 - q).ln()).sum::<f64>())
            / b as f64;
        prop_assert!((l - direct).abs() < 1e-12);
        if m == 1 {
            let bp = tape.bce(column(&tape, &pos), Rc::new(vec![1.0; b])).unwrap();
            let bn = tape.bce(column(&tape, &neg), Rc::new(vec![0.0; b])).unwrap();
            prop_assert!((l - tape.item(bp) - tape.item(bn)).abs() < 1e-12);
        }
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap());
    let before = store.clone();
    let mut adam = Adam::new(&store, 0.1);
    adam.step(&mut store, &[Some(Tensor::zeros(&[1, 3]))]);
    assert_eq!(store.get(id), before.get(id));
}

#[test]
fn adam_first_step_closed_form() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap());
    let g = [0.5, -3.0, 1e-3];
    let lr = 0.01;
    let mut adam = Adam::new(&store, lr);
    let mut twin = (store.clone(), adam.clone());
    adam.step(&mut store, &[Some(Tensor::matrix(1, 3, g.to_vec()).unwrap())]);
    for (k, (&w0, &gk)) in [1.0, -2.0, 3.0].iter().zip(&g).enumerate() {
        let expect = w0 - lr * gk / (gk.abs() + ADAM_EPS);
        assert!((store.get(id).data()[k] - expect).abs() < 1e-15);
    }
    twin.1.step(&mut twin.0, &[Some(Tensor::matrix(1, 3, g.to_vec()).unwrap())]);
    assert_eq!(twin.0, store);
    assert_eq!(twin.1, adam);
}

#[test]
fn config_defaults_and_toml() {
    let c = TrainingConfig::default();
    assert_eq!((c.layers, c.hidden, c.heads, c.learning_rate), (3, 32, 4, 0.001));
    assert_eq!((c.patience, c.negatives, c.fanout), (6, 1, 32));
    let sage = TrainingConfig::from_toml("kind = \"sage\"\nseed = 9\n").unwrap();
    assert_eq!((sage.kind, sage.hidden, sage.seed), (EncoderKind::Sage, 256, 9));
    assert!(matches!(TrainingConfig::from_toml("batch_size = 0"), Err(TrainingError::Config(_))));
    assert!(matches!(TrainingConfig::from_toml("bogus = 1"), Err(TrainingError::Config(_))));
}

#[test]
fn batch_severs_its_predicted_edges() {
    let g = random_graph(20, 80, 0.1, 3);
    let mask = EdgeMask::full(&g);
    let batch: Vec<Edge> = g.edges(Direction::Outgoing).into_iter().take(10).collect();
    let prep = prepare_batch(&g, &mask, &batch, &small_config(), 7).unwrap();
    let sub = &prep.subgraph;
    let local_txns: Vec<usize> = prep
        .positives
        .iter()
        .chain(&prep.negatives)
        .map(|&(_, t)| sub.local_txn(t).unwrap())
        .collect();
    for rel in [Relation::OutFwd, Relation::OutRev] {
        let adj = sub.relation(rel);
        let txn_side = if rel == Relation::OutFwd { &adj.dst } else { &adj.src };
        assert!(txn_side.iter().all(|t| !local_txns.contains(t)));
    }
    // incoming edges of the same transactions stay
    let inc = sub.relation(Relation::InRev);
    assert!(local_txns.iter().any(|t| inc.dst.contains(t)));
    assert_eq!(prep.negatives.len(), 10);
    assert!(prep.negatives.iter().all(|&(c, t)| !g.has_edge(c, t, Direction::Outgoing)));
}

#[test]
fn mixed_or_empty_batches_are_rejected() {
    let g = random_graph(10, 20, 0.0, 1);
    let mask = EdgeMask::full(&g);
    let mut mixed = g.edges(Direction::Outgoing)[..2].to_vec();
    mixed.push(g.edges(Direction::Incoming)[0]);
    assert!(matches!(prepare_batch(&g, &mask, &mixed, &small_config(), 0), Err(TrainingError::Config(_))));
    assert!(matches!(prepare_batch(&g, &mask, &[], &small_config(), 0), Err(TrainingError::Config(_))));
}

#[test]
fn steps_reduce_the_loss() {
    let g = random_graph(30, 70, 0.1, 8);
    let split = split_edges(&g, SplitRatios::default(), 1).unwrap();
    let mask = EdgeMask::from_edges(&g, &split.message);
    let config = small_config();
    let mut model = Model::new(config.encoder(), g.customer_dim(), g.txn_dim(), 2).unwrap();
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let before = evaluation_loss(&model, &g, &mask, &split.supervision, &config, 99).unwrap();
    for step in 0..50u64 {
        let d = Direction::BOTH[(step % 2) as usize];
        let batch = split.supervision_in(d);
        train_step(&mut model, &mut adam, &g, &mask, &batch, &config, step, Mode::Train).unwrap();
    }
    let after = evaluation_loss(&model, &g, &mask, &split.supervision, &config, 99).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn fit_is_deterministic_and_returns_best_checkpoint() {
    let g = random_graph(30, 90, 0.1, 4);
    let split = split_edges(&g, SplitRatios::default(), 2).unwrap();
    let config = TrainingConfig {
        max_epochs: 5,
        patience: 0,
        ..small_config()
    };
    let a = fit(&g, &split, &config).unwrap();
    let b = fit(&g, &split, &config).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params().values(), b.model.params().values());

    assert!(a.history.len() <= config.max_epochs);
    let best = a.history[a.best_epoch - 1].val_loss;
    assert!(a.history.iter().all(|r| best <= r.val_loss));
    // patience 0: training stops at the first epoch that fails to improve
    if a.history.len() < config.max_epochs {
        assert_eq!(a.history.len(), a.best_epoch + 1);
    }
    let mask = EdgeMask::from_edges(&g, &split.message);
    let again = evaluation_loss(&a.model, &g, &mask, &split.validation, &config, config.seed ^ 0x7661_6c69_6400_0002)
        .unwrap();
    assert_eq!(again, best);
}

#[test]
fn frozen_encoder_is_untouched_by_training() {
    let g = random_graph(20, 60, 0.1, 6);
    let split = split_edges(&g, SplitRatios::default(), 3).unwrap();
    let config = TrainingConfig {
        max_epochs: 2,
        ..small_config()
    };
    let mut model = Model::new(config.encoder(), g.customer_dim(), g.txn_dim(), 1).unwrap();
    model.freeze_encoder(true);
    let before = model.clone();
    let out = fit_model(model, &g, &split, &config, Mode::Eval, &mut |_| {}).unwrap();
    for id in before.params().ids() {
        let same = before.params().get(id) == out.model.params().get(id);
        assert_eq!(same, id != before.decoder_id(), "{}", before.params().name(id));
    }
    assert_eq!(before.running_stats(), out.model.running_stats());
}

#[test]
fn empty_supervision_is_a_config_error() {
    let g = random_graph(10, 20, 0.0, 1);
    let split = split_edges(
        &g,
        SplitRatios {
            message: 1.0,
            supervision: 0.0,
            validation: 0.0,
        },
        1,
    )
    .unwrap();
    assert!(matches!(fit(&g, &split, &small_config()), Err(TrainingError::Config(_))));
}

#[test]
fn severing_matches_rebuilding_without_the_edge() {
    let (mut txns, profiles) = random_records(15, 50, 0.1, 12);
    let g = build_graph(&txns, &profiles).unwrap();
    let model = Model::new(small_config().encoder(), g.customer_dim(), g.txn_dim(), 4).unwrap();
    let t = (0..g.n_transactions())
        .find(|&t| g.txn_source(t).is_some() && g.txn_dest(t).is_some())
        .unwrap();
    let c = g.txn_source(t).unwrap();
    let mut view = GraphView::new(&g);
    view.sever(t, Direction::Outgoing);
    let (zc, zt) = model.embed(&full_subgraph(&view, 2).unwrap()).unwrap();
    let severed = model.decode_pair(zc.row(c), zt.row(t)).unwrap();

    txns[t].source = Party::External;
    let rebuilt = build_graph(&txns, &profiles).unwrap();
    let (zc2, zt2) = model.embed(&full_subgraph(&GraphView::new(&rebuilt), 2).unwrap()).unwrap();
    let direct = model.decode_pair(zc2.row(c), zt2.row(t)).unwrap();
    assert!((severed - direct).abs() < 1e-9);
}

#[test]
fn scoring_contract() {
    let (txns, profiles) = random_records(12, 40, 0.1, 2);
    let g = build_graph(&txns, &profiles).unwrap();
    let model = Model::new(small_config().encoder(), g.customer_dim(), g.txn_dim(), 4).unwrap();
    let mut new = txns[..5].to_vec();
    new.push(txn("fresh", Party::customer("ghost"), Party::customer("c1")));
    new[5].features = vec![0.1, 0.2];
    let results = score_transactions(&model, &g, &new, 32, 0).unwrap();
    let sides: usize = new
        .iter()
        .map(|t| t.source.as_customer().is_some() as usize + t.dest.as_customer().is_some() as usize)
        .sum();
    assert_eq!(results.len(), sides);
    for r in &results {
        match (r.y_hat, r.anomaly_score) {
            (Some(y), Some(a)) => {
                assert!((0.0..=1.0).contains(&y));
                assert_eq!(y + a, 1.0);
                assert!(!r.cold_start);
            }
            _ => assert!(r.cold_start && r.customer_id == "ghost"),
        }
    }
    assert!(results.iter().any(|r| r.cold_start));
    let again = score_transactions(&model, &g, &new, 32, 0).unwrap();
    assert_eq!(results, again);

    let mut bad = new[0].clone();
    bad.features.push(1.0);
    assert!(matches!(score_transactions(&model, &g, &[bad], 32, 0), Err(TrainingError::Data(_))));
    let _ = profile("unused");
}

#[test]
fn metrics_log_has_one_row_per_epoch() {
    let hist = vec![
        EpochRecord {
            epoch: 1,
            train_loss: 1.5,
            val_loss: 1.4,
        },
        EpochRecord {
            epoch: 2,
            train_loss: 1.2,
            val_loss: 1.3,
        },
    ];
    let mut buf = Vec::new();
    write_metrics(&mut buf, &hist).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("epoch,train_loss,val_loss"));
}
