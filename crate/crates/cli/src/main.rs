//! `equistop` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 malformed configuration,
//! 3 model invariant violated, 4 enumeration too large.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] equistop::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Io(_) => 1,
            Self::Schema(_) => 2,
            Self::Model(equistop::Error::EnumerationTooLarge { .. }) => 4,
            Self::Model(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "equistop",
    version,
    about = "Equilibrium stopping regions for Markov chains under non-exponential discounting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Model configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated state labels, e.g. "x2,x4".
    #[arg(long, global = true)]
    pub region: Option<String>,
    /// Decision tolerance; defaults to 1e-9 times the largest state value.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for Monte Carlo checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Prefix for CSV outputs.
    #[arg(long, global = true)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Build the chain and discount function and report their properties.
    Validate,
    /// Classify a stopping region as mild, weak and strong.
    Classify,
    /// Run the optimal mild equilibrium iteration.
    Iterate,
    /// List every mild region by brute force.
    Enumerate,
    /// Case map of the two-state problem over a grid of b/a and lambda_b.
    TwoStateMap,
    /// American put analysis.
    Put,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(json) => {
            println!("{json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
