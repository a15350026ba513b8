//! Command-line harness: runs samplers, drift curves, ablation grids,
//! discriminator training and the self-check suite from a TOML config,
//! writing CSV/JSON artifacts next to a `run-manifest.json`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 divergence or I/O failure.

pub mod config;
mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "difflab", version, about = "Guided diffusion sampling on analytic Gaussian-mixture worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Trajectories per run (or per grid cell); overrides the config file.
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples with the configured sampler: samples.csv, trace.csv.
    Simulate,
    /// Training- versus sampling-side ||eps|| curves: drift.csv.
    Drift,
    /// Guidance-weight by epsilon-scale grid: ablation.csv.
    Ablate,
    /// Train a real-versus-model discriminator: weights.json, training-log.csv.
    TrainDisc,
    /// Run the self-check suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Default)]
pub struct VerifyArgs {
    /// Monte-Carlo draws per variance-check case (default 100000).
    #[arg(long)]
    pub n: Option<usize>,
    /// Perturb the lambda division inside the samplers.
    #[arg(long, hide = true)]
    pub mutate_lambda: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {}", .0.join(", "))]
    Verify(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<difflab::Error> for Failure {
    fn from(e: difflab::Error) -> Self {
        use difflab::Error as E;
        match e {
            E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::NonPositiveLambda { .. } | E::Toml(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        batch: cli.common.batch,
    };
    let config = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    let ctx = commands::Context {
        config,
        quiet: cli.common.quiet,
    };
    match &cli.command {
        Command::Simulate => ctx.simulate(),
        Command::Drift => ctx.drift(),
        Command::Ablate => ctx.ablate(),
        Command::TrainDisc => ctx.train_disc(),
        Command::Verify(args) => ctx.verify(args, cli.common.batch),
    }
}
