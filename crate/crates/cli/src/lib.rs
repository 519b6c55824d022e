//! The `fewshot` command line: class splits, training, evaluation, the
//! Gaussian simulation and gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 check
//! failure.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use fewshot_core::metrics::JunkScoreKind;
use fewshot_core::sampler::{JunkPool, Partition};
use fewshot_core::trainer::{DEFAULT_LR, DEFAULT_MINIBATCHES, DEFAULT_MINIBATCH_SIZE};
use fewshot_core::DistanceKind;

mod commands;
pub mod config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(fewshot_core::Error),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }

    pub(crate) fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fewshot_core::Error> for CliError {
    fn from(e: fewshot_core::Error) -> Self {
        CliError::Data(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fewshot",
    version,
    about = "Few-shot prototype classification with a junk class"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random train/val/test category splits.
    Split(SplitArgs),
    /// Generate a Gaussian-cluster embedding store and manifests.
    Synth(SynthArgs),
    /// Train the projection and junk head on sampled episodes.
    Train(TrainArgs),
    /// Score a checkpoint on sampled episodes for each shot count.
    Eval(EvalArgs),
    /// Run the Gaussian few-shot simulation or the expected-distance estimate.
    Simulate(SimulateArgs),
    /// Compare analytic gradients to finite differences on random episodes.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand. Never written into outputs.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` file of flag defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for batch work (results do not depend on it).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    /// Number of categories; ids are 0..N.
    #[arg(long, default_value_t = 80)]
    pub categories: u32,
    #[arg(long, default_value_t = 12)]
    pub n_splits: usize,
    /// Train,val,test category counts.
    #[arg(long, value_delimiter = ',', default_value = "57,8,15")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub categories: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Expected distance between class means, in units of sigma.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 60)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 40)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub manifest_train: PathBuf,
    #[arg(long)]
    pub manifest_val: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub way: usize,
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    #[arg(long, default_value_t = 0.25)]
    pub junk_prob: f64,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_MINIBATCHES)]
    pub minibatches: usize,
    #[arg(long, default_value_t = DEFAULT_MINIBATCH_SIZE)]
    pub minibatch_size: usize,
    /// Per-mini-batch learning-rate factor [default: 0.1^(1/32000)].
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1024)]
    pub val_episodes: usize,
    #[arg(long, default_value_t = fewshot_core::engine::DEFAULT_PROJ_DIM)]
    pub proj_dim: usize,
    /// euclidean or squared-euclidean.
    #[arg(long, default_value = "euclidean")]
    pub distance: DistanceKind,
    /// Junk source for validation episodes: same-partition or held-out.
    #[arg(long, default_value = "same-partition")]
    pub val_junk_pool: JunkPool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Manifest files (source-train and source-val); repeat or comma-separate.
    #[arg(long, required = true, value_delimiter = ',')]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub split: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub partition: Partition,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,15")]
    pub shots_list: Vec<usize>,
    /// Episodes per shot count.
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 3)]
    pub way: usize,
    #[arg(long, default_value_t = 0.25)]
    pub junk_prob: f64,
    /// same-partition or held-out.
    #[arg(long, default_value = "same-partition")]
    pub junk_pool: JunkPool,
    /// Score ranked for the AUC: probability or logit.
    #[arg(long, default_value = "probability")]
    pub junk_score: JunkScoreKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Standard deviation of each class-mean coordinate.
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 15)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 3)]
    pub way: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,15")]
    pub shots_list: Vec<usize>,
    /// Episodes per shot count (trials in expected-distance mode).
    #[arg(long, default_value_t = 20_000)]
    pub episodes: usize,
    /// Estimate E|x' - mean_N|^2 instead of classification accuracy.
    #[arg(long)]
    pub expected_distance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub proj_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
    pub tolerance: f64,
    #[arg(long, default_value = "euclidean")]
    pub distance: DistanceKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Split(a) => &a.common,
            Command::Synth(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Gradcheck(a) => &a.common,
        }
    }
}

/// Parses `args` (including the program name), merging any `--config` file.
pub fn parse_args(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let command = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let args = match config::expand_args(&command, args) {
        Ok(a) => a,
        Err(e) => return Err(clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("{e}\n"))),
    };
    let matches = command.try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Runs the parsed command and returns what it prints on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let threads = cli.command.common().threads;
    with_threads(threads, || commands::dispatch(&cli.command))
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<u32>, f: impl FnOnce() -> Result<R, CliError> + Send) -> Result<R, CliError> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(CliError::usage)?
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(_threads: Option<u32>, f: impl FnOnce() -> Result<R, CliError>) -> Result<R, CliError> {
    f()
}

/// Runs the CLI and returns the process exit code.
pub fn run(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            let _ = write!(out, "{text}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "fewshot: {e}");
            e.exit_code()
        }
    }
}
