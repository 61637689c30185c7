mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::commands::{execute, CliError};
use crate::manifest::replay;

/// Markov-modulated jump processes: validation, simulation, averaging and
/// convergence studies.
///
/// Exit status: 0 success, 1 validation failure (or a failed verdict),
/// 2 runtime error.
#[derive(Debug, Parser)]
#[command(name = "plii", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the switching chain and the approximation conditions.
    Validate(CommonArgs),
    /// Stationary law of the switching chain.
    Stationary(CommonArgs),
    /// Pre-limit trajectories and characteristics for each eps.
    Simulate(CommonArgs),
    /// Averaged model and limit trajectories.
    Limit(CommonArgs),
    /// Monte Carlo convergence study of the pre-limit towards the limit.
    Verify(CommonArgs),
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Validate,
    Stationary,
    Simulate,
    Limit,
    Verify,
}

impl Kind {
    fn default_paths(self) -> usize {
        match self {
            Kind::Verify => 1000,
            Kind::Simulate | Kind::Limit => 10,
            Kind::Validate | Kind::Stationary => 0,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated eps values in (0, 1].
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// Number of paths.
    #[arg(long = "N")]
    paths: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "plii-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Fixed ODE step of the limit flow (default 1e-3 T).
    #[arg(long)]
    ode_step: Option<f64>,
    /// Half-width of the u grid used by `validate`.
    #[arg(long, default_value_t = 5.0)]
    u_max: f64,
    /// Also dump per-path samples (`verify`).
    #[arg(long)]
    samples: bool,
}

/// Fully resolved arguments, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArgs {
    pub command: Kind,
    pub eps: Vec<f64>,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub format: Format,
    pub ode_step: Option<f64>,
    pub u_max: f64,
    pub samples: bool,
}

pub const DEFAULT_EPS: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

impl RunArgs {
    fn resolve(kind: Kind, a: &CommonArgs) -> Self {
        Self {
            command: kind,
            eps: a.eps.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec()),
            horizon: a.horizon,
            paths: a.paths.unwrap_or_else(|| kind.default_paths()),
            seed: a.seed,
            format: a.format,
            ode_step: a.ode_step,
            u_max: a.u_max,
            samples: a.samples,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Replay { manifest, out } => replay(&manifest, &out),
        Command::Validate(a) => run(Kind::Validate, &a),
        Command::Stationary(a) => run(Kind::Stationary, &a),
        Command::Simulate(a) => run(Kind::Simulate, &a),
        Command::Limit(a) => run(Kind::Limit, &a),
        Command::Verify(a) => run(Kind::Verify, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(kind: Kind, a: &CommonArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.model)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", a.model.display())))?;
    execute(&RunArgs::resolve(kind, a), &text, &a.out)
}
