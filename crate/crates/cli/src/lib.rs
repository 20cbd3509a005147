//! Experiment runner: dataset generation, federated training, active-learning
//! campaigns, the numeric check battery, and earth-mover evaluation. All
//! commands emit deterministic CSV files plus a manifest with checksums.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod projection;
pub mod verify;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Exit code for failed checks.
pub const EXIT_CHECK_FAILURE: i32 = 1;
/// Exit code for configuration problems.
pub const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "fedalign",
    about = "Federated domain generalisation with energy-based alignment: experiment runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic multi-domain dataset as one CSV per domain.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the federated model and write history, parameters, and ledger.
    TrainFdg {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// fedavg = plain weighted averaging; feda = full pipeline.
        #[arg(long)]
        baseline: Option<String>,
        /// Run every domain as the held-out target in turn.
        #[arg(long, default_value_t = false)]
        all_targets: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run an active-learning campaign and write per-cycle metrics,
    /// selections, and latent projections.
    RunFal {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        selector: Option<String>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the full numeric check battery; nonzero exit on any failure.
    Verify,
    /// Exact earth mover's distance between two embedding CSV files.
    EmdEval {
        /// First point set (label,f1,...,fd rows; labels ignored).
        file_a: PathBuf,
        /// Second point set, same width and row count.
        file_b: PathBuf,
    },
}

/// Parse arguments from the process environment and run.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Command-level error carrying its intended process exit code.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub check_failure: bool,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            check_failure: false,
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            check_failure: true,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.check_failure {
            EXIT_CHECK_FAILURE
        } else {
            EXIT_CONFIG_ERROR
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<fedalign::Error> for CliError {
    fn from(e: fedalign::Error) -> Self {
        CliError::config(e.to_string())
    }
}
