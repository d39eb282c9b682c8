//! `cfmi`: ampute, train, impute, evaluate and the 2D demo from the shell.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mechanism, Method};

#[derive(Debug)]
pub enum CliError {
    MissingInput(PathBuf),
    Config(String),
    Numerical(String),
    Other(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingInput(p) => write!(f, "input not found: {}", p.display()),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<cfmi_core::Error> for CliError {
    fn from(e: cfmi_core::Error) -> Self {
        use cfmi_core::Error as E;
        match e {
            E::Divergence { .. } | E::NonFiniteGradient { .. } | E::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Row { ref source, .. } if matches!(**source, E::Numerical(_)) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}

/// Fails with exit code 2 when `path` does not exist.
pub fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "cfmi", version, about = "Conditional flow matching imputation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if needed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Delete cells from a complete CSV.
    Ampute(AmputeArgs),
    /// Train an imputation model on an incomplete CSV.
    Train(TrainArgs),
    /// Draw multiple imputations with a trained checkpoint.
    Impute(ImputeArgs),
    /// Score imputations against the ground truth.
    Evaluate(EvaluateArgs),
    /// Run the synthetic 2D study and write plotting grids.
    Demo2d(Demo2dArgs),
}

#[derive(Debug, Args)]
pub struct AmputeArgs {
    #[command(flatten)]
    common: Common,
    /// Complete input CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    mechanism: Option<Mechanism>,
    /// Fraction of cells to delete.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Incomplete CSV; empty, `NaN` and `NA` cells are missing.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Constant learning rate instead of the cosine schedule.
    #[arg(long)]
    no_cosine: bool,
    #[arg(long, value_parser = ["random", "random_historical"])]
    split: Option<String>,
    #[arg(long)]
    mix_prob: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Must match the checkpoint's method when given.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Number of imputed copies.
    #[arg(short = 'k', long)]
    copies: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Incomplete CSV the imputations were drawn for.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Complete ground-truth CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Directory holding `impute_k<i>.csv` files.
    #[arg(long)]
    imputations: PathBuf,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Allow a seeded subsample for W2 beyond the exact-size cap.
    #[arg(long)]
    subsample: bool,
    /// Comma-separated subset of w2,rmse,crps,mmd.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Demo2dArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = ["cosine", "two_ring", "gaussian_mixture"])]
    density: Option<String>,
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("CFMI_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "CFMI_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Ampute(a) => commands::ampute(a),
        Command::Train(a) => commands::train(a),
        Command::Impute(a) => commands::impute(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Demo2d(a) => commands::demo2d(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
