use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twofluid_harness::experiments;
use twofluid_harness::report::ReportFormat;
use twofluid_harness::{ExperimentConfig, ExperimentReport, Result};

/// Numerical laboratory for the capillary two-fluid system.
#[derive(Parser)]
#[command(name = "twofluid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Also write the report to this file (`.json` or `.csv`).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closure coefficients, roots and stability verdict.
    Closure {
        #[command(subcommand)]
        action: ClosureAction,
    },
    /// Eigenvalues of the decoupled symbols on the lattice up to `--xi-max`.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        kappa: f64,
        #[arg(long = "xi-max")]
        xi_max: f64,
    },
    /// Littlewood–Paley partition, reconstruction and Bernstein checks.
    LpVerify { config: PathBuf },
    /// Dispersive decay of the free semigroup on a frequency-localized packet.
    Dispersion { config: PathBuf },
    /// One run with diagnostics and checkpoints written to `--out`.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of the configured data.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Incompressible-limit rate over the configured capillarities.
    LimitSweep { config: PathBuf },
    /// Derivative decay rates with a heat-kernel control.
    DecaySweep { config: PathBuf },
    /// Growth of the symbol across a range of capillary-pressure slopes.
    StabilityScan { config: PathBuf },
}

#[derive(Subcommand)]
enum ClosureAction {
    Check { config: PathBuf },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TWOFLUID_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| twofluid_harness::HarnessError::Config(format!("TWOFLUID_THREADS={v} is not a count")))?;
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExperimentReport> {
    configure_threads()?;
    let load = |p: &PathBuf| ExperimentConfig::load(p);
    match &cli.command {
        Command::Closure { action: ClosureAction::Check { config } } => experiments::closure_check(&load(config)?),
        Command::Spectrum { config, kappa, xi_max } => experiments::spectrum(&load(config)?, *kappa, *xi_max),
        Command::LpVerify { config } => experiments::lp_verify(&load(config)?),
        Command::Dispersion { config } => experiments::dispersion(&load(config)?),
        Command::Simulate { config, out, resume } => experiments::simulate(&load(config)?, out, resume.as_deref()),
        Command::LimitSweep { config } => experiments::limit_sweep(&load(config)?),
        Command::DecaySweep { config } => experiments::decay_sweep(&load(config)?),
        Command::StabilityScan { config } => experiments::stability_scan(&load(config)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    print!("{}", report.summary());
    if let Some(path) = &cli.report {
        let format = if path.extension().is_some_and(|e| e == "csv") {
            ReportFormat::Csv
        } else {
            ReportFormat::Json
        };
        if let Err(e) = report.emit(format, path) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
