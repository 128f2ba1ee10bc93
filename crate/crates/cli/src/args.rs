use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "medmamba", version, about = "Multi-scale selective-scan classifier for multichannel time series")]
pub struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (CSVs, manifest.jsonl, meta.json).
    Synth(SynthArgs),
    /// Split by subject, normalize, train, and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one part of a dataset.
    Eval(EvalArgs),
    /// Channel centralization metrics and the multi-scale mismatch bound.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every parameter gradient on a small model.
    Gradcheck(GradcheckArgs),
    /// Time the bidirectional scan over increasing sequence lengths.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// One informative channel; two classes by oscillation frequency.
    Centralized,
    /// Four classes from a fast burst factor and a slow drift factor.
    Multiscale,
    /// Unit white noise, a control for the centralization metrics.
    Noise,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub subjects: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Window length in samples.
    #[arg(long = "len", default_value_t = 256)]
    pub len: usize,
    /// Independent windows per subject recording.
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    /// Signal to noise power ratio of the informative channel (centralized only).
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    /// Defaults to $MEDMAMBA_SEED, then 41.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Overrides applied on top of the defaults and any `--config` file.
#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layer: Option<usize>,
    #[arg(long)]
    pub d_state: Option<usize>,
    #[arg(long)]
    pub expand: Option<usize>,
    /// Comma-separated, ascending.
    #[arg(long, value_delimiter = ',')]
    pub strides: Option<Vec<usize>>,
    #[arg(long)]
    pub p_ch: Option<f64>,
    #[arg(long)]
    pub p_do: Option<f64>,
    #[arg(long)]
    pub p_dp: Option<f64>,
    /// Share the state matrix between scan directions.
    #[arg(long)]
    pub shared_a: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory for best.ckpt, history.csv, report.json, config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional "model", "train" and "data" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Training seed. Defaults to the config file, then $MEDMAMBA_SEED, then 41.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Several seeds, as `41..45` (inclusive) or `41,42,43`; reports mean and std.
    #[arg(long)]
    pub seeds: Option<String>,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Default)]
pub struct DataFlags {
    /// Window hop in samples (defaults to the window length).
    #[arg(long)]
    pub hop: Option<usize>,
    /// Train, validation and test subject fractions.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Do not stratify subjects by label.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitPart::Test)]
    pub split: SplitPart,
    /// Used only when no split.json sits next to the checkpoint.
    #[command(flatten)]
    pub data: DataFlags,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["manifest", "csv"])))]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// A single headerless CSV, rows are timesteps.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,25")]
    pub strides: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Maximum relative error per tensor.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON model configuration replacing the built-in small one.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    pub lens: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub d_inner: usize,
    #[arg(long, default_value_t = 16)]
    pub d_state: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
