use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use s3d::model::Precision;

#[derive(Debug, Parser)]
#[command(name = "s3d", version, about = "Skippy simultaneous speculative decoding toolkit")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a freshly initialized weight file.
    Init(InitArgs),
    /// Train the draft objective and write a checkpoint plus a loss CSV.
    Train(TrainArgs),
    /// Generate tokens from a prompt.
    Decode(DecodeArgs),
    /// Compare speculative and plain decoding throughput.
    Bench(BenchArgs),
    /// Evaluate the analytic improvement surface over (gamma, beta).
    Plan(PlanArgs),
    /// Monte-Carlo estimate of tokens per iteration over the same grid.
    Simulate(SimulateArgs),
    /// Measure per-depth draft acceptance on a corpus.
    Measure(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct Workers {
    /// Worker threads for data-parallel loops; 1 runs sequentially.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Model configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training run description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the output directory of the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides the total step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Save a checkpoint every N steps (always saved at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub workers: Workers,
}

/// Decoding parameters; flags override the JSON run config.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Weight file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Skipped band as `m..n` (1-based, n exclusive).
    #[arg(long)]
    pub skip: Option<String>,
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Per-depth branching factors, e.g. `2,2,1,1`.
    #[arg(long)]
    pub branch: Option<String>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// `greedy` or `sampling`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub end_token: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Prompt token ids as a JSON array.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Decode with the full model only.
    #[arg(long, conflicts_with = "verify_lossless")]
    pub baseline: bool,
    /// Run speculative and plain greedy decoding and compare them.
    #[arg(long)]
    pub verify_lossless: bool,
    /// With --verify-lossless: number of seeded random-prompt episodes.
    #[arg(long, requires = "verify_lossless")]
    pub episodes: Option<usize>,
    /// Per-iteration telemetry (JSON lines).
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
}

/// Token source: a JSON file, or the synthetic corpus.
#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// JSON array of token ids, or an array of such arrays.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub corpus_seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub corpus_tokens: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 16)]
    pub episodes: usize,
    #[arg(long, default_value_t = 16)]
    pub prompt_len: usize,
    /// Report path (JSON); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Baseline speed for the memory-normalized metric.
    #[arg(long, requires_all = ["baseline_memory", "memory"])]
    pub baseline_speed: Option<f64>,
    #[arg(long, requires_all = ["baseline_speed", "memory"])]
    pub baseline_memory: Option<f64>,
    /// Evaluated system's speed; the measured speculative speed when absent.
    #[arg(long, requires = "baseline_speed")]
    pub speed: Option<f64>,
    #[arg(long, requires = "baseline_speed")]
    pub memory: Option<f64>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.01)]
    pub u: f64,
    #[arg(long, default_value_t = 0.04)]
    pub delta: f64,
    /// Comma-separated beta values.
    #[arg(long, conflicts_with_all = ["beta_grid", "model"])]
    pub betas: Option<String>,
    /// Use `i/N` for `i = 1..=N` as the beta grid.
    #[arg(long, default_value_t = 8)]
    pub beta_grid: usize,
    /// Use the betas realizable by a model's symmetric skip bands.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gamma values: a comma list and/or inclusive `a-b` ranges.
    #[arg(long, default_value = "1-8")]
    pub gammas: String,
    /// `linear` or `none`.
    #[arg(long, default_value = "linear", conflicts_with = "fit")]
    pub discount: String,
    /// Build the discount from a `measure` CSV.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Surface CSV; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated `m..n` bands; every symmetric band when absent.
    #[arg(long)]
    pub skips: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub gamma: usize,
    #[arg(long, default_value_t = 256)]
    pub trials: usize,
    #[arg(long, default_value_t = 16)]
    pub context: usize,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}
