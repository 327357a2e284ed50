//! `mfbd` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or budget error,
//! 4 failed built-in check (`verify`, `audit`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
            CliError::Check(_) => "check",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Check(m) => m,
        }
    }
}

impl From<mfbd::Error> for CliError {
    fn from(e: mfbd::Error) -> Self {
        use mfbd::Error as E;
        match e {
            E::InvalidModel(_)
            | E::InvalidDistribution(_)
            | E::InvalidArgument(_)
            | E::Unsupported(_)
            | E::Parse(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "mfbd", version, about = "Mean-field birth-death processes: simulation, coupling, master equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// TOML (or `.json`) run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of particles
    #[arg(long = "n", visible_alias = "N", global = true)]
    pub n: Option<usize>,
    /// Box side for the exact audits
    #[arg(long = "k", visible_alias = "K", global = true)]
    pub k: Option<u64>,
    /// Comma-separated particle counts for scaling sweeps
    #[arg(long, value_delimiter = ',', global = true)]
    pub n_list: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub n_replicas: Option<usize>,
    #[arg(long, global = true)]
    pub t_max: Option<f64>,
    #[arg(long, global = true)]
    pub grid_steps: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate the configuration and exit
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Replicas of the particle system; pooled marginals and mean curve
    Simulate,
    /// Mean coupling distance between two initial laws
    Couple,
    /// Integrate the nonlinear master equation
    Ode,
    /// Stationary solution of the master equation
    FixedPoint,
    /// Particle/nonlinear-process gap against N
    Chaos,
    /// Empirical-measure distance to the flow against N, with deviation frequencies
    Empirical,
    /// Long-run empirical measure against the stationary solution
    Stationary,
    /// Drift inequality for V(x) = Σ x_i at sampled and adversarial states
    Lyapunov,
    /// Exact marginality and drift checks of the coupling on a finite box
    Audit,
    /// Constants λ, α, κ of the configured model
    CheckAssumptions,
    /// Wasserstein-1 distance between two `k,mass` CSV files
    W1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Built-in assertions on the configured model
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc =
                serde_json::json!({ "status": "error", "kind": e.kind(), "code": e.code(), "message": e.message() });
            eprintln!("{doc}");
            ExitCode::from(e.code())
        }
    }
}
