mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmr_core::metrics::EvalTask;
use vmr_core::{Condition, Phi};

#[derive(Debug, Parser)]
#[command(name = "vmr", version, about = "Video corpus moment retrieval with potentially relevant pairs")]
pub struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus in the interchange layout.
    Synth(SynthArgs),
    /// Mine potentially relevant pairs over a whole manifest.
    DetectPairs(DetectArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Rank moments for each query and write a results file.
    Retrieve(RetrieveArgs),
    /// Score a results file against the manifest.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to videos.jsonl next to the manifest.
    #[arg(long)]
    pub videos: Option<PathBuf>,
    /// Defaults to parses.txt next to the manifest.
    #[arg(long)]
    pub parses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    #[arg(long)]
    pub phi: Option<Phi>,
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub n_actions: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Pair dump; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub condition: Option<Condition>,
    /// Fix every pair confidence to 1.
    #[arg(long)]
    pub c_one: bool,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Final checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Best-on-validation checkpoint, written when the manifest has a `val` split.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
    /// Per-epoch JSON lines.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Split to run; `all` for every query.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub k_videos: Option<usize>,
    #[arg(long)]
    pub k_results: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub results: PathBuf,
    /// Repeatable; all three when omitted.
    #[arg(long = "task")]
    pub tasks: Vec<EvalTask>,
    /// Split to score; `all` for every query.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Row label in the report.
    #[arg(long, default_value = "")]
    pub label: String,
    #[arg(long, default_value = "")]
    pub phi: String,
    #[arg(long, default_value = "")]
    pub theta: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds 0..n.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Per-check outcomes as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Failure classes mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<vmr_core::Error> for Failure {
    fn from(e: vmr_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("VMR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("VMR_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Data(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|()| commands::run(cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
