//! Command-line driver: dataset generation, fitting, group-count selection,
//! Monte Carlo benchmarks, and metric reports.
//!
//! Exit codes: 0 on success, 1 on model or numeric failure, 2 on bad inputs
//! (missing files, malformed data, invalid flags). Set `GTNAR_LOG=info` for
//! progress output on stderr.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod tables;

use commands::{benchmark, fit, generate, metrics, select};

#[derive(Parser)]
#[command(name = "gtnar", version, about = "Group tensor network autoregression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset bundle from an experiment config.
    Generate(generate::GenerateArgs),
    /// Estimate parameters and memberships on a dataset.
    Fit(fit::FitArgs),
    /// Choose group counts over a candidate grid.
    Select(select::SelectArgs),
    /// Run Monte Carlo replicates and report error metrics.
    Benchmark(benchmark::BenchmarkArgs),
    /// Score a single dataset's fit against its recorded truth.
    Metrics(metrics::MetricsArgs),
}

/// Restores the default SIGPIPE disposition so a closed pipe (for example
/// `gtnar fit ... | head`) ends the process quietly instead of panicking.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GTNAR_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => generate::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Select(args) => select::run(args),
        Command::Benchmark(args) => benchmark::run(args),
        Command::Metrics(args) => metrics::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
