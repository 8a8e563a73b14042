//! End-to-end runs of the `amlgraph` binary.

use std::path::Path;
use std::process::{Command, Output};

use amlgraph::cli::RunManifest;
use amlgraph::evaluation::MetricsReport;
use amlgraph::training::AnomalyResult;

fn amlgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amlgraph")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = amlgraph(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn manifest(p: &str) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Dataset and graph for a small population; returns nothing, files land in `dir`.
fn prepare(dir: &Path, customers: &str) {
    ok(&["gen-data", "--out", &path(dir, "data"), "--n-customers", customers, "--seed", "4"]);
    ok(&[
        "build-graph",
        "--transactions",
        &path(dir, "data/train.jsonl"),
        "--profiles",
        &path(dir, "data/profiles.jsonl"),
        "--out",
        &path(dir, "graph.bin"),
    ]);
}

#[test]
fn smoke_pipeline_on_500_customers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "500");
    let gen = manifest(&path(d, "data/manifest.json"));
    assert_eq!(gen.command, "gen-data");
    assert_eq!(gen.seed, Some(4));
    assert_eq!(gen.config["n_customers"], 500);
    assert!(gen.outputs.iter().any(|f| f.path.ends_with("labels.json") && f.sha256.len() == 64));

    ok(&["train", "--graph", &path(d, "graph.bin"), "--out", &path(d, "gat.ckpt"), "--max-epochs", "2", "--seed", "1"]);
    let m = manifest(&path(d, "gat.ckpt.manifest.json"));
    assert_eq!((m.command.as_str(), m.seed), ("train", Some(1)));
    assert_eq!(m.config["training"]["max_epochs"], 2);
    assert_eq!(m.tool_version, env!("CARGO_PKG_VERSION"));
    let log = std::fs::read_to_string(path(d, "gat.ckpt.metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    ok(&[
        "score",
        "--checkpoint",
        &path(d, "gat.ckpt"),
        "--graph",
        &path(d, "graph.bin"),
        "--transactions",
        &path(d, "data/test.jsonl"),
        "--out",
        &path(d, "scores.jsonl"),
    ]);
    ok(&[
        "evaluate",
        "--scores",
        &path(d, "scores.jsonl"),
        "--labels",
        &path(d, "data/labels.json"),
        "--out",
        &path(d, "anomaly.json"),
    ]);
    ok(&[
        "evaluate",
        "--checkpoint",
        &path(d, "gat.ckpt"),
        "--graph",
        &path(d, "graph.bin"),
        "--test",
        &path(d, "data/test.jsonl"),
        "--out",
        &path(d, "heldout.json"),
    ]);
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(path(d, "heldout.json")).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&report.roc_auc));
    let roc = std::fs::read_to_string(path(d, "heldout.json.roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));

    ok(&["embed", "--checkpoint", &path(d, "gat.ckpt"), "--graph", &path(d, "graph.bin"), "--layer", "2", "--out", &path(d, "emb.csv")]);
    let emb = std::fs::read_to_string(path(d, "emb.csv")).unwrap();
    assert_eq!(emb.lines().count(), 501);

    let snap = format!("{}:{}", path(d, "gat.ckpt"), path(d, "graph.bin"));
    ok(&["diverge", "--snapshot", &snap, "--snapshot", &snap, "--customer", "c00000", "--out", &path(d, "div.jsonl")]);
    let div: serde_json::Value = serde_json::from_str(std::fs::read_to_string(path(d, "div.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(div["diverging"], false);
}

#[test]
fn baselines_train_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "150");
    let cfg = path(d, "train.toml");
    std::fs::write(&cfg, "[mlp]\nmax_epochs = 2\n\n[dgi]\nmax_epochs = 2\n\n[training]\nmax_epochs = 1\nhidden = 8\nheads = 2\n").unwrap();
    for kind in ["mlp", "dgi", "sage", "gin"] {
        let ckpt = path(d, &format!("{kind}.ckpt"));
        ok(&["train", "--graph", &path(d, "graph.bin"), "--config", &cfg, "--model", kind, "--out", &ckpt]);
        ok(&[
            "score",
            "--checkpoint",
            &ckpt,
            "--graph",
            &path(d, "graph.bin"),
            "--transactions",
            &path(d, "data/test.jsonl"),
            "--out",
            &path(d, &format!("{kind}.jsonl")),
        ]);
    }
    assert!(Path::new(&path(d, "dgi.ckpt.pretrain.csv")).exists());
    // an mlp has no embeddings
    let out = amlgraph(&["embed", "--checkpoint", &path(d, "mlp.ckpt"), "--graph", &path(d, "graph.bin"), "--out", &path(d, "e.csv")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_hand_crafted_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ex = path(d, "ex.jsonl");
    std::fs::write(
        &ex,
        "{\"score\":0.9,\"label\":1}\n{\"score\":0.8,\"label\":0}\n{\"score\":0.7,\"label\":1}\n{\"score\":0.1,\"label\":0}\n",
    )
    .unwrap();
    ok(&["evaluate", "--examples", &ex, "--out", &path(d, "r.json")]);
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(path(d, "r.json")).unwrap()).unwrap();
    assert_eq!(report.roc_auc, 0.75);
    assert_eq!((report.positives, report.negatives), (2, 2));
    let m = manifest(&path(d, "r.json.manifest.json"));
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.outputs.len(), 2);
}

#[test]
fn unknown_customer_is_a_cold_start_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "100");
    ok(&["train", "--graph", &path(d, "graph.bin"), "--out", &path(d, "m.ckpt"), "--max-epochs", "1"]);
    let mut txn: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(path(d, "data/test.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    txn["source"] = "nobody".into();
    let new = path(d, "new.jsonl");
    std::fs::write(&new, format!("{txn}\n")).unwrap();
    let out = amlgraph(&[
        "score",
        "--checkpoint",
        &path(d, "m.ckpt"),
        "--graph",
        &path(d, "graph.bin"),
        "--transactions",
        &new,
        "--out",
        &path(d, "s.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let results: Vec<AnomalyResult> = std::fs::read_to_string(path(d, "s.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let cold: Vec<&AnomalyResult> = results.iter().filter(|r| r.customer_id == "nobody").collect();
    assert_eq!(cold.len(), 1);
    assert!(cold[0].cold_start && cold[0].anomaly_score.is_none());
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(amlgraph(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(amlgraph(&["--help"]).status.code(), Some(0));
    assert_eq!(amlgraph(&["train", "--graph", "g", "--out", "o", "--model", "transformer"]).status.code(), Some(1));

    let bad_cfg = path(d, "bad.toml");
    std::fs::write(&bad_cfg, "n_customers = 10\nunknown_key = 3\n").unwrap();
    assert_eq!(amlgraph(&["gen-data", "--config", &bad_cfg, "--out", &path(d, "x")]).status.code(), Some(1));

    let missing = path(d, "missing.jsonl");
    let out = amlgraph(&["build-graph", "--transactions", &missing, "--profiles", &missing, "--out", &path(d, "g.bin")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let garbage = path(d, "garbage.bin");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = amlgraph(&["score", "--checkpoint", &garbage, "--graph", &garbage, "--transactions", &garbage, "--out", &path(d, "s")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inputs_are_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "80");
    let before = std::fs::read(path(d, "graph.bin")).unwrap();
    ok(&["train", "--graph", &path(d, "graph.bin"), "--out", &path(d, "m.ckpt"), "--max-epochs", "1"]);
    assert_eq!(std::fs::read(path(d, "graph.bin")).unwrap(), before);
    let out = amlgraph(&["train", "--graph", &path(d, "graph.bin"), "--out", &path(d, "graph.bin"), "--max-epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(std::fs::read(path(d, "graph.bin")).unwrap(), before);
}
