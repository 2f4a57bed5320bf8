//! Command implementations behind the `fbq` binary.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::Path;

use clap::{Parser, Subcommand};

/// Failure classes, each mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// A verification check did not hold.
    Verify(String),
    /// Bad flags or configuration.
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Verify(_) => 1,
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl CliError {
    /// Prefixes the message, keeping the class.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Self::Verify(m) => Self::Verify(format!("{ctx}: {m}")),
            Self::Usage(m) => Self::Usage(format!("{ctx}: {m}")),
            Self::Io(m) => Self::Io(format!("{ctx}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Verify(m) => write!(f, "verification failed: {m}"),
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fbq_core::Error> for CliError {
    fn from(e: fbq_core::Error) -> Self {
        use fbq_core::Error as E;
        match e {
            E::Io(_) | E::Format { .. } => Self::Io(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "fbq",
    version,
    about = "Block fallback quantization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic activation matrix with outliers.
    Gen(commands::gen::GenArgs),
    /// Quantization error over block sizes, bit widths, methods and rates.
    QuantSweep(commands::sweep::SweepArgs),
    /// Check the fallback GEMM against the oracle and tiling bit-identity.
    GemmCheck(commands::gemm_check::GemmCheckArgs),
    /// Train the toy GLU model next to its full-precision twin.
    Train(commands::train::TrainArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => commands::gen::run(&a),
        Command::QuantSweep(a) => commands::sweep::run(&a),
        Command::GemmCheck(a) => commands::gemm_check::run(&a),
        Command::Train(a) => commands::train::run(&a),
    }
}

/// Writes a CSV with a header row; every cell is already formatted.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
