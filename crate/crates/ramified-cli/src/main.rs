//! `ramified` — build fractal level graphs, run the solvers and export
//! spectra, all driven by one TOML config for reproducible runs.
//!
//! Exit codes: 0 success, 1 internal/solver error, 2 precondition or
//! configuration violation, 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{RunContext, SpectrumKind};

/// Classified command-line errors; the kind decides the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad input data, or a violated precondition
    /// (exit 2).
    Usage(String),
    /// Internal or solver failure (exit 1).
    Solver(String),
    /// A built-in verification check failed after a solve (exit 3).
    Verification(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn solver(message: impl Into<String>) -> Self {
        CliError::Solver(message.into())
    }

    pub fn verification(message: impl Into<String>) -> Self {
        CliError::Verification(message.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Solver(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<ramified_core::Error> for CliError {
    fn from(err: ramified_core::Error) -> Self {
        use ramified_core::Error as E;
        match err {
            E::Verification(_) => CliError::Verification(err.to_string()),
            E::Singular(_) | E::EigenNonConvergence { .. } | E::Io(_) => {
                CliError::Solver(err.to_string())
            }
            _ => CliError::Usage(err.to_string()),
        }
    }
}

/// Classify a result produced while *reading referenced input files*:
/// missing or malformed inputs are configuration problems, not solver
/// failures.
pub fn input<T>(result: ramified_core::Result<T>) -> Result<T, CliError> {
    result.map_err(|e| match e {
        ramified_core::Error::Io(io) => CliError::usage(format!("cannot read input: {io}")),
        other => CliError::from(other),
    })
}

#[derive(Parser)]
#[command(
    name = "ramified",
    version,
    about = "Dirichlet forms, 1-forms and spectra on fractal level graphs",
    arg_required_else_help = true
)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Output directory (overrides `out_dir` from the config).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Print progress notes to stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export the level graph (vertices, edges, measure, summary).
    Build,
    /// Run a solver and export solution plus diagnostics.
    Solve {
        #[command(subcommand)]
        task: SolveTask,
    },
    /// Compute a spectrum and export it as CSV.
    Spectrum {
        #[command(subcommand)]
        target: SpectrumTarget,
    },
}

#[derive(Subcommand)]
enum SolveTask {
    /// Weak solution of the quasilinear equation with an edgewise
    /// nonlinearity.
    Quasilinear,
    /// Fixed point of the drift equation (needs a positive `rho`).
    Drift,
    /// Potential, flow and pressure for prescribed boundary fluxes.
    Neumann,
    /// Stationarity check for divergence-free data.
    NsVerify,
}

#[derive(Subcommand)]
enum SpectrumTarget {
    /// Spectrum of the (negative) generator.
    Generator,
    /// Spectrum of the 1-form Laplacian.
    FormLaplacian,
    /// Spectrum of the magnetic Hamiltonian.
    Magnetic,
    /// Spectrum of the block Dirac operator.
    Dirac,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = RunContext::new(&cli.config, cli.out_dir, cli.verbose)?;
    match cli.command {
        Command::Build => commands::cmd_build(&ctx),
        Command::Solve { task } => match task {
            SolveTask::Quasilinear => commands::cmd_solve_quasilinear(&ctx),
            SolveTask::Drift => commands::cmd_solve_drift(&ctx),
            SolveTask::Neumann => commands::cmd_solve_neumann(&ctx),
            SolveTask::NsVerify => commands::cmd_ns_verify(&ctx),
        },
        Command::Spectrum { target } => {
            let kind = match target {
                SpectrumTarget::Generator => SpectrumKind::Generator,
                SpectrumTarget::FormLaplacian => SpectrumKind::FormLaplacian,
                SpectrumTarget::Magnetic => SpectrumKind::Magnetic,
                SpectrumTarget::Dirac => SpectrumKind::Dirac,
            };
            commands::cmd_spectrum(&ctx, kind)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
