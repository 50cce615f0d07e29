#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qcsb::QcsbError;

#[derive(Parser, Debug)]
#[command(
    name = "qcsb",
    version,
    about = "Oscillator coupled to a dissipative spin bath"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Integrator tolerance, overriding the config file.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Reserved; every computation is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one parameter set and fit the trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repeat the simulation over [sweep] values and fit scaling laws.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form equilibrium quantities.
    Thermo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Glass stiffness ratio over a (T, w_p) grid.
    GlassMap {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check the block integrator against the full-space reference.
    Validate {
        /// Multiply the gain term; only for testing that validation fails.
        #[arg(long, hide = true, default_value_t = 1.0)]
        gain_scale: f64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<QcsbError> for CliError {
    fn from(e: QcsbError) -> Self {
        match e {
            QcsbError::InvalidArgument(m) => CliError::Config(m),
            QcsbError::Parse(_) | QcsbError::Schema { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    if let Some(tol) = common.tol {
        if !(tol > 0.0) {
            return Err(CliError::Config(format!("--tol must be > 0, got {tol}")));
        }
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    std::fs::create_dir_all(&common.out)?;
    match cli.command {
        Command::Simulate { config } => commands::simulate(&config, &common),
        Command::Sweep { config } => commands::sweep(&config, &common),
        Command::Thermo { config } => commands::thermo(&config, &common),
        Command::GlassMap { config } => commands::glass_map(&config, &common),
        Command::Validate { gain_scale } => commands::validate(gain_scale, &common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcsb: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
