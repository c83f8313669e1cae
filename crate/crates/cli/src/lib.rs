//! Training, evaluation and codebook export for the `hypervq` command.
//!
//! Every command is deterministic for a fixed seed: outputs contain no timestamps and all
//! randomness flows from one seeded generator per command.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hypervq::data::DataError;
use hypervq::metrics::MetricsError;
use hypervq::models::{CheckpointError, ModelError};
use hypervq::quantizers::QuantizerError;
use thiserror::Error;

pub use commands::{cmd_eval, cmd_export_codebook, cmd_train_classifier, cmd_train_vqvae, EvalReport};
pub use config::{LoadedConfig, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => Self::NonFinite(e.to_string()),
            ModelError::Config(m) => Self::Config(m),
            other => Self::Model(other),
        }
    }
}

impl CliError {
    /// Process exit status: 2 for configuration errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::NonFinite(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypervq", version, about = "Hyperbolic vector quantization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VQVAE and write `model.ckpt`, `train.log` and `summary.txt`.
    TrainVqvae(CommonArgs),
    /// Train a classifier head on a frozen VQVAE backbone.
    TrainClassifier(CommonArgs),
    /// Report reconstruction and clustering metrics on clean and corrupted test data.
    Eval(CommonArgs),
    /// Write the codebook of a trained model as `codebook.csv`.
    ExportCodebook(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Quantizer variant name.
    #[arg(long)]
    pub quantizer: Option<String>,
    #[arg(long)]
    pub device_threads: Option<usize>,
    /// Input checkpoint for commands that consume a trained model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<LoadedConfig, CliError> {
        LoadedConfig::load(self.config.as_deref())?.apply(&Overrides {
            seed: self.seed,
            quantizer: self.quantizer.clone(),
            device_threads: self.device_threads,
        })
    }

    fn checkpoint(&self) -> Result<&std::path::Path, CliError> {
        self.checkpoint.as_deref().ok_or_else(|| CliError::Config("--checkpoint is required".into()))
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::TrainVqvae(a) => {
            let summary = cmd_train_vqvae(&a.resolve()?, &a.out)?;
            print!("{summary}");
        }
        Command::TrainClassifier(a) => {
            let summary = cmd_train_classifier(&a.resolve()?, a.checkpoint()?, &a.out)?;
            print!("{summary}");
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a.resolve()?, a.checkpoint()?, &a.out)?;
            print!("{}", report.to_text());
        }
        Command::ExportCodebook(a) => {
            a.resolve()?;
            let rows = cmd_export_codebook(a.checkpoint()?, &a.out)?;
            println!("rows={rows}");
        }
    }
    Ok(())
}
