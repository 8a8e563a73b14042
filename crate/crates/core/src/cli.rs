//! Command-line pipeline: data generation, graph building, training,
//! scoring, evaluation and embedding analytics.
//!
//! Every artifact-producing command writes a JSON run manifest next to its
//! output with the effective configuration, the seed and SHA-256 digests of
//! inputs and outputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{
    divergence_report, export_embeddings, AnalyticsError, SnapshotEmbeddings, DIVERGENCE_THRESHOLD,
};
use crate::baselines::{
    dgi_downstream, dgi_pretrain, mlp_fit, mlp_heldout_examples, DgiConfig, Mlp, MlpConfig, MLP_MAGIC,
};
use crate::datagen::{generate, DatagenError, Labels, SyntheticConfig};
use crate::evaluation::{metrics_report, roc_curve, MetricError, ScoredExample};
use crate::graph::{
    build_graph, read_jsonl, split_edges, BipartiteGraph, CustomerProfile, Direction, GraphError, NodeType,
    RawTransaction,
};
use crate::model::{EncoderKind, Model, ModelError, CHECKPOINT_MAGIC};
use crate::ndtensor::TensorError;
use crate::training::{
    fit_model, heldout_examples, score_transactions, write_metrics, AnomalyResult, EpochRecord, TrainingConfig,
    TrainingError,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failure classes, one per exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn tensor_class(e: TensorError) -> CliError {
    match e {
        TensorError::NonFinite(_) => CliError::Numerical(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Config(_) => CliError::Config(e.to_string()),
            GraphError::Tensor(t) => tensor_class(t),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Tensor(t) => tensor_class(t),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(_) => CliError::Config(e.to_string()),
            TrainingError::NonFinite(_) => CliError::Numerical(e.to_string()),
            TrainingError::Model(m) => m.into(),
            TrainingError::Graph(g) => g.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Config(_) => CliError::Config(e.to_string()),
            AnalyticsError::Model(m) => m.into(),
            AnalyticsError::Graph(g) => g.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::NonFinite(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "amlgraph", version, about = "Graph link-prediction anomaly scoring for transaction networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth labels.
    GenData {
        /// TOML file with generator settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_customers: Option<usize>,
    },
    /// Build a graph snapshot from transaction and profile files.
    BuildGraph {
        #[arg(long)]
        transactions: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder or a baseline on a graph snapshot.
    Train {
        #[arg(long)]
        graph: PathBuf,
        /// TOML file with a `model` key and `[training]`, `[mlp]`, `[dgi]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Per-epoch metrics log; defaults to `<out>.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score new transactions against a trained model and reference graph.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        transactions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        fanout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute ROC AUC and average precision.
    ///
    /// Inputs are one of: `--examples`; `--scores` with `--labels`; or
    /// `--checkpoint`, `--graph` and `--test` for held-out link prediction.
    Evaluate {
        #[arg(long)]
        examples: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        fanout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// ROC export; defaults to `<out>.roc.csv`.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Export node embeddings from one encoder layer.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = NodeKind::Customer)]
        node_type: NodeKind,
        /// 1-based encoder layer; the last layer when omitted.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine divergence of customer embeddings across snapshots.
    Diverge {
        /// `checkpoint:graph` pair, in snapshot order; repeat for each snapshot.
        #[arg(long = "snapshot", required = true)]
        snapshots: Vec<String>,
        #[arg(long = "customer", required = true)]
        customers: Vec<String>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = DIVERGENCE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gat,
    Sage,
    Gin,
    Mlp,
    Dgi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NodeKind {
    Customer,
    Transaction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        primary.join("manifest.json")
    } else {
        suffixed(primary, "manifest.json")
    }
}

/// `<path>.<suffix>`, keeping the original extension.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest(
    command: &str,
    primary: &Path,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let m = RunManifest {
        command: command.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed,
        config,
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    let path = manifest_path(primary);
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Refuses to write over any input.
fn guard_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for o in outputs {
        for i in inputs {
            if canon(o) == canon(i) {
                return Err(CliError::Usage(format!("output {} would overwrite an input", o.display())));
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path, e))?;
        writeln!(w).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_graph(path: &Path) -> Result<BipartiteGraph, CliError> {
    let g = BipartiteGraph::read_snapshot(&mut open(path)?)?;
    Ok(g)
}

/// A checkpoint of either family, told apart by its magic bytes.
pub enum Checkpoint {
    Encoder(Model),
    Mlp(Mlp),
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        Ok(Checkpoint::Encoder(Model::read_checkpoint(&mut bytes.as_slice())?))
    } else if bytes.starts_with(MLP_MAGIC) {
        Ok(Checkpoint::Mlp(Mlp::read_checkpoint(&mut bytes.as_slice())?))
    } else {
        Err(CliError::Data(format!("{} is not a checkpoint", path.display())))
    }
}

fn check_dims(graph: &BipartiteGraph, dims: (usize, usize)) -> Result<(), CliError> {
    if dims != (graph.customer_dim(), graph.txn_dim()) {
        return Err(CliError::Data(format!(
            "checkpoint expects {}/{} features, graph has {}/{}",
            dims.0,
            dims.1,
            graph.customer_dim(),
            graph.txn_dim()
        )));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    run(cli.command)
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData {
            config,
            out,
            seed,
            n_customers,
        } => gen_data(config.as_deref(), &out, seed, n_customers),
        Command::BuildGraph {
            transactions,
            profiles,
            out,
        } => build(&transactions, &profiles, &out),
        Command::Train {
            graph,
            config,
            out,
            model,
            seed,
            max_epochs,
            metrics,
        } => train(&graph, config.as_deref(), &out, model, seed, max_epochs, metrics),
        Command::Score {
            checkpoint,
            graph,
            transactions,
            out,
            fanout,
            seed,
        } => score(&checkpoint, &graph, &transactions, &out, fanout, seed),
        Command::Evaluate {
            examples,
            scores,
            labels,
            checkpoint,
            graph,
            test,
            fanout,
            seed,
            out,
            roc,
        } => {
            let source = match (examples, scores, labels, checkpoint, graph, test) {
                (Some(e), None, None, None, None, None) => EvalSource::Examples(e),
                (None, Some(s), Some(l), None, None, None) => EvalSource::Anomaly { scores: s, labels: l },
                (None, None, None, Some(c), Some(g), Some(t)) => EvalSource::Heldout {
                    checkpoint: c,
                    graph: g,
                    test: t,
                },
                _ => {
                    return Err(CliError::Usage(
                        "evaluate takes --examples, or --scores with --labels, or --checkpoint with --graph and --test"
                            .into(),
                    ))
                }
            };
            evaluate(source, fanout, seed, &out, roc)
        }
        Command::Embed {
            checkpoint,
            graph,
            node_type,
            layer,
            out,
        } => embed(&checkpoint, &graph, node_type, layer, &out),
        Command::Diverge {
            snapshots,
            customers,
            layer,
            threshold,
            out,
        } => diverge(&snapshots, &customers, layer, threshold, &out),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>, n_customers: Option<usize>) -> Result<(), CliError> {
    let mut c = match config {
        Some(p) => SyntheticConfig::from_toml(&read_text(p)?)?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(n) = n_customers {
        c.n_customers = n;
    }
    c.validate()?;
    let data = generate(&c)?;
    let outputs = data.write_dir(out, c.boundary())?;
    let inputs: Vec<PathBuf> = config.map(Path::to_path_buf).into_iter().collect();
    let mut cfg = serde_json::to_value(&c).map_err(|e| CliError::Data(e.to_string()))?;
    cfg["test_boundary"] = c.boundary().into();
    write_manifest("gen-data", out, Some(c.seed), cfg, &inputs, &outputs)?;
    Ok(())
}

fn build(transactions: &Path, profiles: &Path, out: &Path) -> Result<(), CliError> {
    guard_outputs(&[transactions, profiles], &[out])?;
    let txns: Vec<RawTransaction> = read_records(transactions)?;
    let profs: Vec<CustomerProfile> = read_records(profiles)?;
    let g = build_graph(&txns, &profs)?;
    let mut w = create(out)?;
    g.write_snapshot(&mut w)?;
    w.flush().map_err(|e| io_err(out, e))?;
    drop(w);
    let cfg = serde_json::json!({
        "customers": g.n_customers(),
        "transactions": g.n_transactions(),
        "outgoing_edges": g.n_edges(Direction::Outgoing),
        "incoming_edges": g.n_edges(Direction::Incoming),
    });
    write_manifest(
        "build-graph",
        out,
        None,
        cfg,
        &[transactions.to_path_buf(), profiles.to_path_buf()],
        &[out.to_path_buf()],
    )?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: Option<ModelKind>,
    training: Option<toml::Table>,
    mlp: Option<MlpConfig>,
    dgi: Option<DgiSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DgiSection {
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
}

impl Default for DgiSection {
    fn default() -> Self {
        let d = DgiConfig::default();
        Self {
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            patience: d.patience,
        }
    }
}

fn training_config(table: Option<&toml::Table>, kind: EncoderKind) -> Result<TrainingConfig, CliError> {
    let mut table = table.cloned().unwrap_or_default();
    match table.get("kind").and_then(|k| k.as_str()) {
        Some(k) if k.parse::<EncoderKind>()? != kind => {
            return Err(CliError::Config(format!("[training] kind {k:?} contradicts the chosen model")));
        }
        _ => {}
    }
    table.insert("kind".into(), toml::Value::String(format!("{kind:?}").to_lowercase()));
    let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(TrainingConfig::from_toml(&text)?)
}

#[allow(clippy::too_many_arguments)]
fn train(
    graph_path: &Path,
    config: Option<&Path>,
    out: &Path,
    model: Option<ModelKind>,
    seed: Option<u64>,
    max_epochs: Option<usize>,
    metrics: Option<PathBuf>,
) -> Result<(), CliError> {
    let file: TrainFile = match config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => TrainFile::default(),
    };
    let kind = model.or(file.model).unwrap_or(ModelKind::Gat);
    let metrics = metrics.unwrap_or_else(|| suffixed(out, "metrics.csv"));
    let mut inputs = vec![graph_path.to_path_buf()];
    inputs.extend(config.map(Path::to_path_buf));
    guard_outputs(
        &inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
        &[out, metrics.as_path()],
    )?;
    let graph = load_graph(graph_path)?;
    let mut outputs = vec![out.to_path_buf(), metrics.clone()];
    let progress = |r: &EpochRecord| eprintln!("epoch {} train {:.6} val {:.6}", r.epoch, r.train_loss, r.val_loss);

    let (effective, seed_used) = match kind {
        ModelKind::Mlp => {
            let mut c = file.mlp.clone().unwrap_or_default();
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(m) = max_epochs {
                c.max_epochs = m;
            }
            let fit = mlp_fit(&graph, &c)?;
            fit.history.iter().for_each(progress);
            let mut w = create(out)?;
            fit.model.write_checkpoint(&mut w)?;
            w.flush().map_err(|e| io_err(out, e))?;
            write_metrics(create(&metrics)?, &fit.history).map_err(|e| io_err(&metrics, e))?;
            (serde_json::json!({ "model": kind, "mlp": c, "best_epoch": fit.best_epoch }), c.seed)
        }
        ModelKind::Gat | ModelKind::Sage | ModelKind::Gin | ModelKind::Dgi => {
            let encoder_kind = match kind {
                ModelKind::Sage => EncoderKind::Sage,
                ModelKind::Gin => EncoderKind::Gin,
                _ => EncoderKind::Gat,
            };
            let mut c = training_config(file.training.as_ref(), encoder_kind)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(m) = max_epochs {
                c.max_epochs = m;
            }
            c.validate()?;
            let split = split_edges(&graph, c.split, c.seed)?;
            let mut cb = |r: &EpochRecord| progress(r);
            let (fit, extra) = if kind == ModelKind::Dgi {
                let d = file.dgi.clone().unwrap_or_default();
                let pre = dgi_pretrain(
                    &graph,
                    &DgiConfig {
                        encoder: c.encoder(),
                        learning_rate: d.learning_rate,
                        max_epochs: d.max_epochs,
                        patience: d.patience,
                        seed: c.seed,
                    },
                )?;
                let pre_path = suffixed(out, "pretrain.csv");
                let mut w = create(&pre_path)?;
                writeln!(w, "epoch,loss").map_err(|e| io_err(&pre_path, e))?;
                for (i, l) in pre.losses.iter().enumerate() {
                    writeln!(w, "{},{:.17e}", i + 1, l).map_err(|e| io_err(&pre_path, e))?;
                }
                w.flush().map_err(|e| io_err(&pre_path, e))?;
                outputs.push(pre_path);
                (dgi_downstream(pre.model, &graph, &split, &c, &mut cb)?, serde_json::to_value(&d).ok())
            } else {
                let model = Model::new(c.encoder(), graph.customer_dim(), graph.txn_dim(), c.seed)?;
                (
                    fit_model(model, &graph, &split, &c, crate::ndtensor::Mode::Train, &mut cb)?,
                    None,
                )
            };
            let mut w = create(out)?;
            fit.model.write_checkpoint(&mut w)?;
            w.flush().map_err(|e| io_err(out, e))?;
            write_metrics(create(&metrics)?, &fit.history).map_err(|e| io_err(&metrics, e))?;
            (
                serde_json::json!({ "model": kind, "training": c, "dgi": extra, "best_epoch": fit.best_epoch }),
                c.seed,
            )
        }
    };
    write_manifest("train", out, Some(seed_used), effective, &inputs, &outputs)?;
    Ok(())
}

fn mlp_results(mlp: &Mlp, graph: &BipartiteGraph, txns: &[RawTransaction]) -> Result<Vec<AnomalyResult>, CliError> {
    let mut out = Vec::new();
    for t in txns {
        if t.features.len() != graph.txn_dim() {
            return Err(CliError::Data(format!("transaction {} has the wrong feature width", t.txn_id)));
        }
        let x_t = graph.txn_scaler().apply(&t.features);
        let feat = |p: &crate::graph::Party| {
            p.as_customer()
                .and_then(|id| graph.customer_index(id))
                .map(|c| graph.customer_features().row(c))
        };
        let (src, dst) = (feat(&t.source), feat(&t.dest));
        for (direction, party, known) in [
            (Direction::Outgoing, &t.source, src.is_some()),
            (Direction::Incoming, &t.dest, dst.is_some()),
        ] {
            let Some(id) = party.as_customer() else { continue };
            let y = if known { Some(mlp.predict(src, dst, &x_t)?) } else { None };
            out.push(AnomalyResult {
                txn_id: t.txn_id.clone(),
                direction,
                customer_id: id.to_string(),
                y_hat: y,
                anomaly_score: y.map(crate::model::anomaly_score),
                cold_start: !known,
            });
        }
    }
    Ok(out)
}

fn score(checkpoint: &Path, graph_path: &Path, transactions: &Path, out: &Path, fanout: usize, seed: u64) -> Result<(), CliError> {
    guard_outputs(&[checkpoint, graph_path, transactions], &[out])?;
    if fanout == 0 {
        return Err(CliError::Config("fanout must be at least 1".into()));
    }
    let graph = load_graph(graph_path)?;
    let txns: Vec<RawTransaction> = read_records(transactions)?;
    let results = match load_checkpoint(checkpoint)? {
        Checkpoint::Encoder(m) => {
            check_dims(&graph, m.input_dims())?;
            score_transactions(&m, &graph, &txns, fanout, seed)?
        }
        Checkpoint::Mlp(m) => {
            check_dims(&graph, m.input_dims())?;
            mlp_results(&m, &graph, &txns)?
        }
    };
    write_records(out, &results)?;
    write_manifest(
        "score",
        out,
        Some(seed),
        serde_json::json!({ "fanout": fanout, "results": results.len() }),
        &[checkpoint.to_path_buf(), graph_path.to_path_buf(), transactions.to_path_buf()],
        &[out.to_path_buf()],
    )?;
    Ok(())
}

/// A scored example whose label may be written as a boolean or as 0/1.
#[derive(Deserialize)]
struct ExampleRecord {
    score: f64,
    #[serde(deserialize_with = "flexible_label")]
    label: bool,
}

fn flexible_label<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum L {
        B(bool),
        N(f64),
    }
    match L::deserialize(d)? {
        L::B(b) => Ok(b),
        L::N(x) if x == 0.0 => Ok(false),
        L::N(x) if x == 1.0 => Ok(true),
        L::N(x) => Err(serde::de::Error::custom(format!("label {x} is neither 0 nor 1"))),
    }
}

enum EvalSource {
    Examples(PathBuf),
    Anomaly { scores: PathBuf, labels: PathBuf },
    Heldout { checkpoint: PathBuf, graph: PathBuf, test: PathBuf },
}

/// Per transaction, the highest anomaly score over its scored sides.
pub fn transaction_anomaly_scores(results: &[AnomalyResult]) -> Vec<(String, f64)> {
    let mut order = Vec::new();
    let mut best: HashMap<&str, f64> = HashMap::new();
    for r in results {
        let Some(s) = r.anomaly_score else { continue };
        match best.get_mut(r.txn_id.as_str()) {
            Some(b) => *b = b.max(s),
            None => {
                order.push(r.txn_id.as_str());
                best.insert(&r.txn_id, s);
            }
        }
    }
    order.into_iter().map(|id| (id.to_string(), best[id])).collect()
}

fn evaluate(source: EvalSource, fanout: usize, seed: u64, out: &Path, roc: Option<PathBuf>) -> Result<(), CliError> {
    let roc = roc.unwrap_or_else(|| suffixed(out, "roc.csv"));
    let (examples, inputs, kind) = match source {
        EvalSource::Examples(p) => {
            let recs: Vec<ExampleRecord> = read_records(&p)?;
            let ex = recs.iter().map(|r| ScoredExample::new(r.score, r.label)).collect();
            (ex, vec![p], "examples")
        }
        EvalSource::Anomaly { scores, labels } => {
            let results: Vec<AnomalyResult> = read_records(&scores)?;
            let labels_doc: Labels =
                serde_json::from_reader(open(&labels)?).map_err(|e| CliError::Data(format!("{}: {e}", labels.display())))?;
            let flagged = labels_doc.anomalous_ids();
            let known: std::collections::HashSet<&str> =
                labels_doc.transactions.iter().map(|t| t.txn_id.as_str()).collect();
            let mut ex = Vec::new();
            for (id, s) in transaction_anomaly_scores(&results) {
                if !known.contains(id.as_str()) {
                    return Err(CliError::Data(format!("no label for transaction {id}")));
                }
                ex.push(ScoredExample::new(s, flagged.contains(id.as_str())));
            }
            (ex, vec![scores, labels], "anomaly")
        }
        EvalSource::Heldout { checkpoint, graph, test } => {
            let g = load_graph(&graph)?;
            let txns: Vec<RawTransaction> = read_records(&test)?;
            let ex = match load_checkpoint(&checkpoint)? {
                Checkpoint::Encoder(m) => {
                    check_dims(&g, m.input_dims())?;
                    heldout_examples(&m, &g, &txns, fanout, seed)?
                }
                Checkpoint::Mlp(m) => {
                    check_dims(&g, m.input_dims())?;
                    mlp_heldout_examples(&m, &g, &txns, seed)?
                }
            };
            (ex, vec![checkpoint, graph, test], "heldout")
        }
    };
    guard_outputs(
        &inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
        &[out, roc.as_path()],
    )?;
    let report = metrics_report(&examples)?;
    let curve = roc_curve(&examples)?;
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| io_err(out, e))?;
    writeln!(w).map_err(|e| io_err(out, e))?;
    w.flush().map_err(|e| io_err(out, e))?;
    curve.write_csv(create(&roc)?).map_err(|e| io_err(&roc, e))?;
    write_manifest(
        "evaluate",
        out,
        Some(seed),
        serde_json::json!({ "source": kind, "fanout": fanout }),
        &inputs,
        &[out.to_path_buf(), roc],
    )?;
    Ok(())
}

fn encoder_checkpoint(path: &Path) -> Result<Model, CliError> {
    match load_checkpoint(path)? {
        Checkpoint::Encoder(m) => Ok(m),
        Checkpoint::Mlp(_) => Err(CliError::Usage(format!("{} holds an mlp, which has no embeddings", path.display()))),
    }
}

fn embed(checkpoint: &Path, graph_path: &Path, node: NodeKind, layer: Option<usize>, out: &Path) -> Result<(), CliError> {
    guard_outputs(&[checkpoint, graph_path], &[out])?;
    let model = encoder_checkpoint(checkpoint)?;
    let graph = load_graph(graph_path)?;
    check_dims(&graph, model.input_dims())?;
    let layer = layer.unwrap_or(model.config().layers);
    let node_type = match node {
        NodeKind::Customer => NodeType::Customer,
        NodeKind::Transaction => NodeType::Transaction,
    };
    let table = export_embeddings(&model, &graph, node_type, layer)?;
    let mut w = create(out)?;
    table.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(out, e))?;
    write_manifest(
        "embed",
        out,
        None,
        serde_json::json!({ "node_type": format!("{node:?}").to_lowercase(), "layer": layer }),
        &[checkpoint.to_path_buf(), graph_path.to_path_buf()],
        &[out.to_path_buf()],
    )?;
    Ok(())
}

fn diverge(snapshots: &[String], customers: &[String], layer: Option<usize>, threshold: f64, out: &Path) -> Result<(), CliError> {
    if snapshots.len() < 2 {
        return Err(CliError::Usage("diverge needs at least two --snapshot pairs".into()));
    }
    let mut inputs = Vec::new();
    let mut embedded = Vec::new();
    for s in snapshots {
        let (ckpt, graph) = s
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("snapshot {s:?} must look like checkpoint:graph")))?;
        let (ckpt, graph) = (PathBuf::from(ckpt), PathBuf::from(graph));
        let model = encoder_checkpoint(&ckpt)?;
        let g = load_graph(&graph)?;
        check_dims(&g, model.input_dims())?;
        let l = layer.unwrap_or(model.config().layers);
        embedded.push(SnapshotEmbeddings::from_model(s.clone(), &model, &g, l)?);
        inputs.push(ckpt);
        inputs.push(graph);
    }
    guard_outputs(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &[out])?;
    let reports = customers
        .iter()
        .map(|c| divergence_report(&embedded, c, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    write_records(out, &reports)?;
    write_manifest(
        "diverge",
        out,
        None,
        serde_json::json!({ "threshold": threshold, "layer": layer, "customers": customers }),
        &inputs,
        &[out.to_path_buf()],
    )?;
    Ok(())
}

/// Reads a JSONL file of anomaly results, for callers outside the CLI.
pub fn read_results<R: BufRead>(r: R) -> Result<Vec<AnomalyResult>, CliError> {
    read_jsonl(r).map_err(|e| CliError::Data(e.to_string()))
}
