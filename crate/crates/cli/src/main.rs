mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "fscgrad",
    version,
    about = "Policy-gradient experiments for finite-state controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `toy2` or a `.pomdp` / `.json` model file.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact η, bias, Q, conditional means, ∇η and ∇_β η.
    Exact,
    /// One estimator over several trajectories, with alignments against ∇η.
    Estimate,
    /// B-TD, OL-TD and GPOMDP on shared trajectories: per-trajectory alignments and a summary.
    Compare,
    /// Projected stochastic descent with the configured estimator.
    Train,
    /// Semi-Markov version of the model with the configured sojourn distribution.
    Posmdp,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3: the model or an assumption on the induced chain is violated.
    Model(fscgrad::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Model(e) => write!(f, "model error: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<fscgrad::Error> for CliError {
    fn from(e: fscgrad::Error) -> Self {
        match e {
            fscgrad::Error::InvalidParameter(m) => CliError::Config(m),
            fscgrad::Error::Io(e) => CliError::Io(e),
            e => CliError::Model(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let over = Overrides {
        model: cli.model,
        seed: cli.seed,
        out: cli.out,
    };
    let result = ExperimentConfig::load(cli.config.as_deref(), &over).and_then(|r| match cli.command {
        Command::Exact => run::exact(&r),
        Command::Estimate => run::estimate(&r),
        Command::Compare => run::compare(&r),
        Command::Train => run::train(&r),
        Command::Posmdp => run::posmdp(&r),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fscgrad: {e}");
            ExitCode::from(e.code())
        }
    }
}
