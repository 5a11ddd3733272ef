//! `bigam` — fit penalized bivariate models for binary and ordinal
//! responses, simulate from benchmark generating processes, and
//! compute simulation-based confidence intervals.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure (no convergence or a singular system).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bigam_core::Error;

mod cmd_ci;
mod cmd_fit;
mod cmd_simulate;
mod config;
mod saved_fit;
mod table_io;

#[derive(Parser)]
#[command(
    name = "bigam",
    version,
    about = "Penalized bivariate models for binary and ordinal responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model described by a JSON config to a CSV data file.
    Fit {
        /// Model configuration (JSON).
        #[arg(short, long)]
        config: PathBuf,
        /// Data file (CSV with a header row; "NA" marks missing).
        #[arg(short, long)]
        data: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Draw one data set from a JSON-described generating process.
    Simulate {
        /// Generating-process description (JSON).
        #[arg(short, long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the benchmark replication study of the nonlinear triangular
    /// ordinal process.
    #[command(name = "replicate-fig1")]
    ReplicateFig1 {
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Observations per replication.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Number of replications.
        #[arg(long, default_value_t = 25)]
        reps: usize,
        /// Base seed; replications draw from per-replication streams.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Confidence interval for a scalar functional of a saved fit.
    Ci {
        /// Saved fit (the fit.json written by `bigam fit`).
        #[arg(short, long)]
        fit: PathBuf,
        /// Functional description (JSON).
        #[arg(short = 't', long)]
        functional: PathBuf,
        /// Number of coefficient draws.
        #[arg(long, default_value_t = 10_000)]
        nsim: usize,
        /// Interval level is 1 − alpha.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(code) = init_threads() {
        return code;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit { config, data, out } => cmd_fit::run(&config, &data, &out),
        Command::Simulate { spec, out } => cmd_simulate::run_simulate(&spec, &out),
        Command::ReplicateFig1 { out, n, reps, seed } => {
            cmd_simulate::run_replicate(&out, n, reps, seed)
        }
        Command::Ci {
            fit,
            functional,
            nsim,
            alpha,
            seed,
        } => cmd_ci::run(&fit, &functional, nsim, alpha, seed),
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Spec(_) => 2,
        Error::Data(_) => 3,
        Error::Singular(_) | Error::NoConvergence(_) => 4,
    }
}

/// Cap the worker-thread pool when BIGAM_THREADS is set; results are
/// identical across thread counts, only the wall time changes.
fn init_threads() -> Result<(), ExitCode> {
    let Ok(text) = std::env::var("BIGAM_THREADS") else {
        return Ok(());
    };
    let threads: usize = match text.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => {
            eprintln!("error: BIGAM_THREADS must be a positive integer, got {text:?}");
            return Err(ExitCode::from(2));
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            ExitCode::from(2)
        })
}
