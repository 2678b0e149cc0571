//! `scengan`: synthesize datasets, train Bayesian GAN ensembles, generate and
//! evaluate renewable power scenarios.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "scengan",
    version,
    about = "Bayesian GAN renewable scenario generation"
)]
pub struct Cli {
    /// Seed for every random draw made by the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration file (TOML); required by `train`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write scenario values in MW instead of normalized units.
    #[arg(long, global = true)]
    pub mw: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    MixedWindSolar,
    TwoRegimeWind,
    Spatiotemporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Purity,
    Corr,
    Stats,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: dataset.csv, manifest.toml, labels.csv.
    Synth {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 24)]
        timesteps: usize,
        /// Sites per sample; spatiotemporal only (default 4).
        #[arg(long)]
        sites: Option<usize>,
        /// Nameplate capacity of every site, MW.
        #[arg(long, default_value_t = 100.0)]
        capacity: f64,
    },
    /// Train an ensemble from `--config`.
    Train,
    /// Sample scenarios from a checkpoint into scenarios.csv.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Generator particle index, or `all`.
        #[arg(long, default_value = "all")]
        generator: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Score generated scenarios against reference data.
    Eval {
        /// Scenario CSV from `generate`.
        #[arg(long)]
        scenarios: PathBuf,
        /// Reference scenario CSV, or a dataset CSV (with its manifest).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Manifest for a dataset-CSV reference; defaults to manifest.toml beside it.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Per-sample ground-truth labels of the reference.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: EvalMode,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<scengan::Error> for CliError {
    fn from(e: scengan::Error) -> Self {
        match e {
            scengan::Error::NonFinite(_) => CliError::numeric(e.to_string()),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
