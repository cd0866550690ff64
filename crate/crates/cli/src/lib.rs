//! Config-driven experiment runner. Every pipeline stage is a subcommand;
//! `pipeline` runs them all in order against one output directory.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load, Loaded, Overrides, RunConfig};
pub use error::{CliError, CliResult, ErrorKind};
pub use stages::{run_pipeline, run_stage, version, Context, Stage};

#[derive(Debug, Parser)]
#[command(name = "latreg", version = version(), about = "Few-shot attribute regression from latent hyperplane distances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the file's parallelism block.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Dotted-path override, e.g. `evaluation.repeats=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Sample the training and pool datasets.
    GenData,
    /// Fit the latent hyperplane and the pixel and PCA baselines.
    FitBoundary,
    /// Invert pool images back to extended codes.
    Invert,
    /// Estimate per-layer importance scores.
    LayerScores,
    /// Fit one calibrator from a few labelled pool items.
    Calibrate,
    /// Few-shot curves, regularized and polynomial fits, sampler comparison.
    Evaluate,
    /// Compare ways of reducing extended codes to one distance.
    Ablate,
    /// Sort pool images by the attribute.
    Sort,
    /// All stages in order.
    Pipeline,
}

impl Command {
    pub fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::GenData => Stage::GenData,
            Command::FitBoundary => Stage::FitBoundary,
            Command::Invert => Stage::Invert,
            Command::LayerScores => Stage::LayerScores,
            Command::Calibrate => Stage::Calibrate,
            Command::Evaluate => Stage::Evaluate,
            Command::Ablate => Stage::Ablate,
            Command::Sort => Stage::Sort,
            Command::Pipeline => return None,
        })
    }
}

/// Loads the config, applies overrides and runs the command.
pub fn run(cli: Cli) -> CliResult<Context> {
    let path = cli
        .config
        .ok_or_else(|| CliError::usage("--config <path> is required".into()))?;
    let overrides = Overrides {
        sets: cli.sets,
        seed: cli.seed,
        out: cli.out,
        workers: cli.workers,
    };
    let mut ctx = Context::new(load(&path, &overrides)?);
    match cli.command.stage() {
        Some(stage) => run_stage(&mut ctx, stage)?,
        None => run_pipeline(&mut ctx)?,
    }
    Ok(ctx)
}
