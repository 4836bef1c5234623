//! Batch front-end for time-resolved photon measurement simulations:
//! HOM delay scans, sub-period phase diagnostics, single-photon temporal
//! tomography, and two-photon entanglement scans.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::RunContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Config file unreadable, unparsable, or missing required fields.
    Config,
    /// Config parsed but its values are inconsistent or out of range.
    Validation,
    /// Filesystem failures outside the config itself.
    Io,
    /// Numerical pipeline failures.
    Compute,
}

impl ErrorCategory {
    fn name(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Validation => "validation",
            ErrorCategory::Io => "io",
            ErrorCategory::Compute => "compute",
        }
    }

    fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config | ErrorCategory::Validation => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Compute => 1,
        }
    }
}

#[derive(Debug)]
pub struct AppError {
    pub category: ErrorCategory,
    pub message: String,
}

impl AppError {
    pub fn config(message: String) -> Self {
        Self { category: ErrorCategory::Config, message }
    }

    pub fn validation(message: String) -> Self {
        Self { category: ErrorCategory::Validation, message }
    }

    pub fn io(message: String) -> Self {
        Self { category: ErrorCategory::Io, message }
    }

    pub fn from_lib_validation(e: homtomo::error::HomtomoError) -> Self {
        Self { category: ErrorCategory::Validation, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "homtomo",
    about = "Time-resolved photon measurement via two-photon interference: \
             delay scans, temporal tomography, entanglement scans",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Ignore any configured trial plan and emit exact probabilities.
    #[arg(long)]
    exact: bool,
    /// Override the trial-plan seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Coincidence probability against reference-pulse delay.
    HomScan(RunArgs),
    /// Reconstruct the temporal density matrix from bunching rates.
    Tomography(RunArgs),
    /// Two-photon coherence against detection-time separation.
    EntangleScan(RunArgs),
    /// Sub-period phase fidelity of the configured reference.
    SigmaCheck(RunArgs),
}

fn run(
    args: &RunArgs,
    f: impl FnOnce(&RunContext) -> Result<(), AppError>,
) -> Result<(), AppError> {
    let (config, raw) = config::load(&args.config)?;
    let ctx = RunContext::new(config, &raw, &args.out, args.exact, args.seed)?;
    f(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::HomScan(args) => run(args, |ctx| {
            let path = commands::cmd_hom_scan(ctx)?;
            println!("{}", path.display());
            Ok(())
        }),
        Command::Tomography(args) => run(args, |ctx| {
            for path in commands::cmd_tomography(ctx)? {
                println!("{}", path.display());
            }
            Ok(())
        }),
        Command::EntangleScan(args) => run(args, |ctx| {
            let path = commands::cmd_entangle_scan(ctx)?;
            println!("{}", path.display());
            Ok(())
        }),
        Command::SigmaCheck(args) => run(args, |ctx| {
            let path = commands::cmd_sigma_check(ctx)?;
            println!("{}", path.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category.name(), e.message);
            ExitCode::from(e.category.exit_code())
        }
    }
}
