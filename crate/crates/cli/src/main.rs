//! `cvtomo`: simulate, infer, analyze and calibrate from the command line.

mod analyze;
mod calibrate;
mod config;
mod infer;
mod io;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cvtomo", version, about = "Bayesian tomography of continuous-variable optical states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate homodyne or heterodyne data from a known state.
    Simulate(Flags),
    /// Sample the posterior for a dataset.
    Infer(Flags),
    /// Wigner grids, fidelity curves, cat fits and estimators.
    Analyze(Flags),
    /// Shot-noise calibration and trace ingestion.
    Calibrate(Flags),
}

/// Failure classes, mapped onto exit codes 2 (configuration) and 1 (runtime).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(cvtomo::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use cvtomo::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::InvalidParameter(_)
                | E::SchemeMismatch(_)
                | E::NoMarkers
                | E::DimensionMismatch { .. }
                | E::GridTooNarrow { .. },
            ) => 2,
            CliError::Core(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<cvtomo::Error> for CliError {
    fn from(e: cvtomo::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(cli: Cli) -> CliResult<()> {
    let (flags, f): (&Flags, fn(&RunConfig, &Flags) -> CliResult<()>) = match &cli.command {
        Command::Simulate(fl) => (fl, simulate::run),
        Command::Infer(fl) => (fl, infer::run),
        Command::Analyze(fl) => (fl, analyze::run),
        Command::Calibrate(fl) => (fl, calibrate::run),
    };
    let cfg = RunConfig::resolve(flags)?;
    f(&cfg, flags)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cvtomo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
