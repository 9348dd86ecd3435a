//! `cmkt` command-line pipeline: fetch, synthesize and preprocess data,
//! train, search, evaluate, explain, sweep noise and aggregate reports.
//!
//! Every command writes into a run directory under
//! `$CMKT_CACHE_ROOT/runs/<command>-<config hash>` (or `--out`) and finishes
//! by writing `manifest.json` there.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cmkt::training::{Direction, Method, Scale};
use cmkt::CmktError;
use serde_json::json;

pub mod commands;
pub mod config;
pub mod fetch;
pub mod manifest;

pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "cmkt", version, about = "Cross-modality knowledge transfer experiments")]
pub struct Cli {
    /// Root for run directories.
    #[arg(long, env = "CMKT_CACHE_ROOT", default_value = ".cmkt", global = true)]
    pub cache_root: PathBuf,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and unpack the public dataset record.
    Fetch(FetchArgs),
    /// Write a synthetic paired dataset in the raw layout.
    Synth(SynthArgs),
    /// Build the preprocessed, split array cache from a raw dataset.
    Preprocess(PreprocessArgs),
    /// Train one method and evaluate it on the test split.
    Train(TrainArgs),
    /// Hyperparameter search, optionally retraining the top-k trials.
    Search(SearchArgs),
    /// Evaluate a saved model.
    Evaluate(EvaluateArgs),
    /// LIME explanations and mask intersection statistics.
    Explain(ExplainArgs),
    /// Retrain methods under visual and audio noise.
    NoiseSweep(NoiseSweepArgs),
    /// Aggregate search and sweep runs into summary tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long, default_value = fetch::DEFAULT_RECORD_URL)]
    pub record_url: String,
    /// Destination; defaults to `<cache root>/dataset`.
    #[arg(long)]
    pub dest: Option<PathBuf>,
    /// Download again even when a complete fetch is present.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Strength of the class-independent visual ring.
    #[arg(long, default_value_t = 0.0)]
    pub nuisance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.0)]
    pub visual_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub audio_noise: f64,
    /// Fraction of defect-free samples.
    #[arg(long, default_value_t = 0.25)]
    pub class_ratio: f64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw dataset directory (frames/, audio/, labels.csv).
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

/// Dataset selection shared by the training and analysis commands.
#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Preprocessed cache (or `preprocess` run directory).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate a synthetic dataset of this many samples instead.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<usize>,
    #[arg(long, requires = "synthetic")]
    pub data_seed: Option<u64>,
    #[arg(long, requires = "synthetic")]
    pub nuisance: Option<f64>,
}

/// Training-config flags; each overrides the config file.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "wd")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Classification/alignment trade-off gamma.
    #[arg(long)]
    pub tradeoff: Option<f64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PlanArgs {
    /// visual-only, audio-only, semantic-alignment, fsl-mapping, ssl-mapping,
    /// fusion-data, fusion-feature or fusion-decision.
    #[arg(long)]
    pub method: Option<Method>,
    /// v2a or a2v.
    #[arg(long)]
    pub direction: Option<Direction>,
    /// compact or full.
    #[arg(long, value_parser = parse_scale)]
    pub scale: Option<Scale>,
    /// Run file, preset file or builtin preset name.
    #[arg(long)]
    pub config: Option<String>,
    /// Preset per training phase (repeat for multi-phase methods).
    #[arg(long = "preset")]
    pub presets: Vec<String>,
    #[command(flatten)]
    pub train: TrainFlags,
}

pub fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "compact" => Ok(Scale::Compact),
        "full" => Ok(Scale::Full),
        other => Err(format!("unknown scale `{other}` (compact, full)")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write validation encodings at each snapshot.
    #[arg(long)]
    pub export_encodings: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    /// tpe or random.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Retrain the best k trials with fresh seeds and evaluate on test.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Save every trial's model under trials/.
    #[arg(long)]
    pub keep_checkpoints: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model directory, or a `train` run directory.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<String>,
    /// train, validation or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Prediction-runtime repetitions (median reported).
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<String>,
    /// Image modality to explain; defaults to the model's input.
    #[arg(long)]
    pub modality: Option<cmkt::dataset::Modality>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Explain the first n samples of the split.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Nozzle mask file (0/1 text grid or PNG).
    #[arg(long, conflicts_with = "synthetic_mask")]
    pub mask: Option<PathBuf>,
    /// Use the synthetic dataset's nuisance ring as the mask.
    #[arg(long)]
    pub synthetic_mask: bool,
    #[arg(long)]
    pub perturbations: Option<usize>,
    /// Superpixel grid side (square grid).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseSweepArgs {
    /// Methods to sweep (repeatable).
    #[arg(long = "method")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub direction: Option<Direction>,
    #[arg(long, value_parser = parse_scale)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub config: Option<String>,
    /// Comma-separated pixel sigmas (0 is clean).
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Comma-separated SNRs in dB (`inf` is clean).
    #[arg(long, value_delimiter = ',')]
    pub snrs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Search, train or noise-sweep run directories.
    #[arg(long = "runs", num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Models per method taken from each search's retrained list.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Structured description of a failure, printed to stderr as JSON.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<CmktError>());
    let kind = match core {
        Some(CmktError::MissingArtifact { .. }) => "missing_artifact",
        Some(CmktError::Config(_)) | Some(CmktError::Toml(_)) => "config",
        Some(CmktError::Dataset(_)) => "dataset",
        Some(CmktError::InvalidArgument(_)) => "invalid_argument",
        Some(CmktError::Io { .. }) => "io",
        Some(CmktError::Diverged { .. }) => "diverged",
        Some(_) => "cmkt",
        None => "error",
    };
    let mut v = json!({
        "kind": kind,
        "message": err.to_string(),
        "causes": err.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
    });
    if let Some(CmktError::MissingArtifact { path, hint }) = core {
        v["path"] = json!(path);
        v["hint"] = json!(hint);
    }
    json!({ "error": v })
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    let root = cli.cache_root;
    match cli.command {
        Command::Fetch(a) => cmd_fetch(&root, a, &fetch::HttpTransport),
        Command::Synth(a) => cmd_synth(&root, a),
        Command::Preprocess(a) => cmd_preprocess(&root, a),
        Command::Train(a) => cmd_train(&root, a),
        Command::Search(a) => cmd_search(&root, a),
        Command::Evaluate(a) => cmd_evaluate(&root, a),
        Command::Explain(a) => cmd_explain(&root, a),
        Command::NoiseSweep(a) => cmd_noise_sweep(&root, a),
        Command::Report(a) => cmd_report(&root, a),
    }
}
