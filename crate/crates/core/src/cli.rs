//! Command-line interface: `train`, `evaluate`, `synth`, `sweep`, `walk`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::embedding_io::TextEmbeddings;
use crate::error::{Error, Result};
use crate::evaluation::{node_classification_experiment, EvalConfig, EvalReport};
use crate::graph::{
    keep_labeled_fraction, load_edge_labels, load_edge_list, load_node_labels, Graph,
    LabeledEdgeSet, NodeLabelSet,
};
use crate::synth::PlantedPartition;
use crate::trainer::{train, train_from, TrainConfig, TrainOutput, TrainState};
use crate::walk::generate_walks;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "EDGELAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "edgelab", version, about = "Node embeddings from graph structure and edge labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings and write `<output>.emb`, `.ckpt`, `.manifest.json`, `.report.tsv`.
    Train(TrainArgs),
    /// Score embeddings on multi-label node classification.
    Evaluate(EvaluateArgs),
    /// Generate a planted-partition graph with edge and node labels.
    Synth(SynthArgs),
    /// Train and evaluate over a list of values of one parameter.
    Sweep(SweepArgs),
    /// Dump a random-walk corpus, one walk per line.
    Walk(WalkArgs),
}

/// Training flags; each overrides the field of the same name in the config.
#[derive(Debug, Default, Clone, Args)]
pub struct TrainFlags {
    /// TOML file with `[train]` (and optionally `[eval]`) tables, or a run
    /// manifest to replay.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batches_per_round: Option<usize>,
    #[arg(long)]
    pub structural_batch: Option<usize>,
    #[arg(long)]
    pub relational_batch: Option<usize>,
    #[arg(long)]
    pub walks_per_node: Option<usize>,
    #[arg(long)]
    pub walk_length: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub noise_power: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub early_stop_window: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub unsupervised_rounds: Option<usize>,
    #[arg(long)]
    pub unsupervised_round_batches: Option<usize>,
    #[arg(long)]
    pub restore_best: Option<bool>,
    #[arg(long)]
    pub walk_cache: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct EvalFlags {
    /// Comma-separated training ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub l2_strength: Option<f64>,
    /// Scale embeddings to unit length before classification.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long = "eval-seed")]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub edges: PathBuf,
    pub edge_labels: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output path prefix.
    #[arg(long, short, default_value = "edgelab")]
    pub output: PathBuf,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Add a wall-clock column to the report (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub embeddings: PathBuf,
    pub node_labels: PathBuf,
    #[command(flatten)]
    pub flags: EvalFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fail when a labeled node has no embedding.
    #[arg(long)]
    pub strict: bool,
    /// Write `<output>.eval.txt` and `<output>.eval.csv`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub communities: usize,
    #[arg(long, default_value_t = 50)]
    pub nodes_per_community: usize,
    #[arg(long, default_value_t = 0.2)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    #[arg(long, default_value_t = 0.1)]
    pub label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<output>.edges`, `<output>.elabels`, `<output>.nlabels`.
    #[arg(long, short, default_value = "synth")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    LabelFraction,
    Lambda,
    Dim,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub edges: PathBuf,
    pub node_labels: PathBuf,
    /// Edge labels; needed for `lambda > 0` and for `label-fraction`.
    #[arg(long)]
    pub edge_labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Node-label training ratio used for scoring.
    #[arg(long, default_value_t = 0.05)]
    pub ratio: f64,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Series file `value,mean_macro_f1,std_macro_f1`.
    #[arg(long, short, default_value = "sweep.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    pub edges: PathBuf,
    #[arg(long, default_value_t = 80)]
    pub walks_per_node: usize,
    #[arg(long, default_value_t = 10)]
    pub walk_length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "walks.txt")]
    pub output: PathBuf,
}

/// Contents of a `--config` TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a training command exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub float_bytes: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.to_owned(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// `<prefix><suffix>`, e.g. `out/run` + `.emb`.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return Ok(FileConfig {
            train: manifest.config,
            eval: EvalConfig::default(),
        });
    }
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl TrainFlags {
    /// Config file (if any) with every given flag applied on top.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => load_file_config(path)?.train,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        set!(
            lambda, batches_per_round, structural_batch, relational_batch, walks_per_node,
            walk_length, window, dim, negatives, noise_power, hidden, learning_rate,
            early_stop_window, max_rounds, validation_fraction, unsupervised_rounds,
            restore_best, seed
        );
        if let Some(v) = self.unsupervised_round_batches {
            c.unsupervised_round_batches = Some(v);
        }
        if let Some(v) = &self.walk_cache {
            c.walk_cache = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

impl EvalFlags {
    pub fn resolve(&self, config_file: Option<&Path>) -> Result<EvalConfig> {
        let mut c = match config_file {
            Some(path) => load_file_config(path)?.eval,
            None => EvalConfig::default(),
        };
        if let Some(r) = &self.ratios {
            c.train_ratios = r.clone();
        }
        if let Some(r) = self.repeats {
            c.repeats = r;
        }
        if let Some(l) = self.l2_strength {
            c.l2_strength = l;
        }
        if self.normalize {
            c.normalize = true;
        }
        if let Some(s) = self.eval_seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Loaded training inputs.
pub struct Dataset {
    pub graph: Graph,
    pub edge_labels: LabeledEdgeSet,
}

pub fn load_dataset(edges: &Path, edge_labels: Option<&Path>) -> Result<Dataset> {
    let graph = load_edge_list(open(edges)?).map_err(|e| with_path(e, edges))?;
    let edge_labels = match edge_labels {
        Some(path) => load_edge_labels(open(path)?, &graph).map_err(|e| with_path(e, path))?.1,
        None => LabeledEdgeSet::unlabeled(graph.edge_count(), 0),
    };
    Ok(Dataset { graph, edge_labels })
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        Error::Stream(source) => Error::io(path, source),
        other => other,
    }
}

pub fn check_label_requirement(config: &TrainConfig, has_labels: bool) -> Result<()> {
    if config.lambda > 0.0 && !has_labels {
        return Err(Error::Config(format!(
            "lambda = {} needs an edge-label file (use --lambda 0 for unsupervised training)",
            config.lambda
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutput> {
    let config = args.flags.resolve()?;
    check_label_requirement(&config, args.edge_labels.is_some())?;
    let data = load_dataset(&args.edges, args.edge_labels.as_deref())?;

    let mut inputs = vec![digest_file(&args.edges)?];
    if let Some(p) = &args.edge_labels {
        inputs.push(digest_file(p)?);
    }
    if let Some(p) = &args.resume {
        inputs.push(digest_file(p)?);
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "train".into(),
        config: config.clone(),
        seed: config.seed,
        inputs,
        float_bytes: std::mem::size_of::<crate::Real>(),
    };
    write_file(&with_suffix(&args.output, ".manifest.json"), |out| {
        serde_json::to_writer_pretty(&mut *out, &manifest)
            .map_err(|e| Error::Config(format!("manifest: {e}")))?;
        writeln!(out)?;
        Ok(())
    })?;

    info!(
        "graph: {} nodes, {} edges, {} labeled",
        data.graph.node_count(),
        data.graph.edge_count(),
        data.edge_labels.labeled_count()
    );
    let output = match &args.resume {
        None => train(&data.graph, &data.edge_labels, &config)?,
        Some(path) => {
            let ckpt = Checkpoint::read(open(path)?)?;
            if ckpt.node_ids != data.graph.node_ids() {
                return Err(Error::Validation(format!(
                    "{}: checkpoint nodes do not match the graph",
                    path.display()
                )));
            }
            let state = TrainState {
                adam: crate::params::AdamState {
                    config: config.adam(),
                    ..ckpt.state.adam
                },
                ..ckpt.state
            };
            train_from(&data.graph, &data.edge_labels, &config, state)?
        }
    };

    let emb = TextEmbeddings::from_matrix(data.graph.node_ids(), &output.state.tables.center);
    write_file(&with_suffix(&args.output, ".emb"), |out| emb.write(out))?;
    let ckpt = Checkpoint {
        config: config.clone(),
        node_ids: data.graph.node_ids().to_vec(),
        state: output.state.clone(),
    };
    write_file(&with_suffix(&args.output, ".ckpt"), |out| ckpt.write(out))?;
    write_file(&with_suffix(&args.output, ".report.tsv"), |out| {
        output.report.write_tsv(out, args.timings)
    })?;
    Ok(output)
}

/// Node embeddings aligned with a node-label file.
pub struct EvalInputs {
    pub features: Vec<Vec<f64>>,
    pub labels: NodeLabelSet,
    pub missing: Vec<String>,
}

pub fn load_eval_inputs(embeddings: &Path, node_labels: &Path, strict: bool) -> Result<EvalInputs> {
    let emb = TextEmbeddings::read(open(embeddings)?).map_err(|e| with_path(e, embeddings))?;
    let index = emb.index();
    let (labels, unknown) = load_node_labels(open(node_labels)?, |id| index.get(id).copied())
        .map_err(|e| with_path(e, node_labels))?;
    if !unknown.0.is_empty() {
        let shown: Vec<&str> = unknown.0.iter().take(10).map(String::as_str).collect();
        let msg = format!(
            "{} labeled nodes have no embedding: {}{}",
            unknown.0.len(),
            shown.join(", "),
            if unknown.0.len() > shown.len() { ", ..." } else { "" }
        );
        if strict {
            return Err(Error::Validation(msg));
        }
        warn!("{msg}; excluded");
    }
    Ok(EvalInputs {
        features: emb.vectors,
        labels,
        missing: unknown.0,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let config = args.flags.resolve(args.config.as_deref())?;
    let inputs = load_eval_inputs(&args.embeddings, &args.node_labels, args.strict)?;
    let report = node_classification_experiment(&inputs.features, &inputs.labels, &config)?;
    report.write_table(std::io::stdout().lock())?;
    if let Some(prefix) = &args.output {
        write_file(&with_suffix(prefix, ".eval.txt"), |out| report.write_table(out))?;
        write_file(&with_suffix(prefix, ".eval.csv"), |out| report.write_csv(out))?;
    }
    Ok(report)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let params = PlantedPartition {
        communities: args.communities,
        nodes_per_community: args.nodes_per_community,
        p_in: args.p_in,
        p_out: args.p_out,
        label_fraction: args.label_fraction,
        seed: args.seed,
    };
    let synth = params.generate()?;
    write_file(&with_suffix(&args.output, ".edges"), |out| synth.write_edges(out))?;
    write_file(&with_suffix(&args.output, ".elabels"), |out| synth.write_edge_labels(out))?;
    write_file(&with_suffix(&args.output, ".nlabels"), |out| synth.write_node_labels(out))?;
    info!(
        "{} nodes, {} edges, {} labeled edges",
        synth.graph.node_count(),
        synth.graph.edge_count(),
        synth.edge_labels.labeled_count()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

/// Trains and evaluates once per value of `param`, with shared seeds.
pub fn run_sweep(
    data: &Dataset,
    node_labels: &NodeLabelSet,
    param: SweepParam,
    values: &[f64],
    base: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        let mut edges = data.edge_labels.clone();
        match param {
            SweepParam::Lambda => config.lambda = value,
            SweepParam::Dim => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("dimension {value} is not a positive integer")));
                }
                config.dim = value as usize;
            }
            SweepParam::LabelFraction => {
                edges = keep_labeled_fraction(&data.edge_labels, value, base.seed)?;
            }
        }
        check_label_requirement(&config, edges.labeled_count() > 0)?;
        let out = train(&data.graph, &edges, &config)?;
        let features = embedding_features(&out.state.tables.center);
        let report = node_classification_experiment(&features, node_labels, eval)?;
        let summary = &report.ratios[0];
        info!("{param:?} = {value}: Macro-F1 {:.4} +- {:.4}", summary.mean, summary.std);
        points.push(SweepPoint {
            value,
            mean: summary.mean,
            std: summary.std,
        });
    }
    Ok(points)
}

pub fn embedding_features(center: &crate::Matrix) -> Vec<Vec<f64>> {
    (0..center.rows())
        .map(|r| center.row(r).iter().map(|&x| x as f64).collect())
        .collect()
}

pub fn write_series<W: Write>(points: &[SweepPoint], mut out: W) -> Result<()> {
    writeln!(out, "value,mean_macro_f1,std_macro_f1")?;
    for p in points {
        writeln!(out, "{},{:.17e},{:.17e}", p.value, p.mean, p.std)?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepPoint>> {
    let base = args.train.resolve()?;
    let mut eval = args.eval.resolve(args.train.config.as_deref())?;
    eval.train_ratios = vec![args.ratio];
    eval.validate()?;
    if args.param == SweepParam::LabelFraction && args.edge_labels.is_none() {
        return Err(Error::Config("sweeping label-fraction needs --edge-labels".into()));
    }
    let data = load_dataset(&args.edges, args.edge_labels.as_deref())?;
    let (node_labels, unknown) =
        load_node_labels(open(&args.node_labels)?, |id| data.graph.node_index(id))
            .map_err(|e| with_path(e, &args.node_labels))?;
    if !unknown.0.is_empty() {
        warn!("{} labeled nodes are not in the graph; excluded", unknown.0.len());
    }
    let points = run_sweep(&data, &node_labels, args.param, &args.values, &base, &eval)?;
    write_file(&args.output, |out| write_series(&points, out))?;
    write_series(&points, std::io::stdout().lock())?;
    Ok(points)
}

pub fn cmd_walk(args: &WalkArgs) -> Result<()> {
    let graph = load_edge_list(open(&args.edges)?).map_err(|e| with_path(e, &args.edges))?;
    let corpus = generate_walks(&graph, args.walks_per_node, args.walk_length, args.seed)?;
    write_file(&args.output, |out| corpus.write(&graph, out))
}

/// Configures the global thread pool from [`THREADS_ENV`].
pub fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Train(args) => cmd_train(args).map(drop),
        Command::Evaluate(args) => cmd_evaluate(args).map(drop),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args).map(drop),
        Command::Walk(args) => cmd_walk(args),
    }
}
