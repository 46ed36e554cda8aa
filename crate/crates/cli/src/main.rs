//! `sfr` — generate synthetic data, train, evaluate, gradient-check and inspect.
//!
//! Every command reads one `key=value` configuration (`--config FILE`, optional)
//! and applies trailing `key=value` overrides in order. Exit codes: 0 success,
//! 1 runtime failure, 2 usage or configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sfr_core::Error;

#[derive(Parser, Debug)]
#[command(name = "sfr", version, about = "Three-pathway 3D CNN for early binary classification of time-lapse videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Configuration file of `key=value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `train.max_epochs=5`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with its manifest and split index.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides `run.dataset`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Write into an existing non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one fold; writes checkpoints, the epoch log and the archived config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Lateral wiring (overrides `model.wiring`).
        #[arg(long, value_enum)]
        wiring: Option<WiringArg>,
        /// Dataset directory (overrides `run.dataset`).
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Output directory (overrides `run.output`).
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or both checkpoints of a run directory).
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint file, or a training output directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset directory (overrides `run.dataset`).
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Which split of the configured fold to evaluate.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Also evaluate truncated prefixes of 300, 270, …, 120 frames.
        #[arg(long)]
        sweep: bool,
        /// Also time single-clip inference.
        #[arg(long)]
        time: bool,
        /// Timed repetitions for `--time`.
        #[arg(long, default_value_t = sfr_core::eval::TIMING_REPETITIONS)]
        repetitions: usize,
        /// Report directory (default: `eval` next to the checkpoint).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
        /// Number of random seeds per check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum normwise relative error.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-3)]
        step: f32,
    },
    /// Print a checkpoint's header, configuration and parameter registry.
    Inspect {
        checkpoint: PathBuf,
        /// List every parameter tensor.
        #[arg(long)]
        params: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum WiringArg {
    Option1,
    Option2,
    LateFusion,
}

impl WiringArg {
    pub fn key_value(self) -> &'static str {
        match self {
            WiringArg::Option1 => "option1",
            WiringArg::Option2 => "option2",
            WiringArg::LateFusion => "late-fusion",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeArg {
    Ops,
    Layers,
    Model,
    All,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Usage(String),
    Runtime(String),
    /// Checks ran but did not pass; the report was already printed.
    Failed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Param(_) | Error::Input(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Failed) => ExitCode::from(1),
    }
}
