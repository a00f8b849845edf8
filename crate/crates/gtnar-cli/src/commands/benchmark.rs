//! `gtnar benchmark`: Monte Carlo evaluation of the estimator.
//!
//! Networks and memberships are drawn once from the master seed and held
//! fixed; every replicate redraws covariates and noise on its own seed
//! streams, so results do not depend on worker scheduling.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use gtnar::error::{Error, Result};
use gtnar::estimator::{fit, fit_oracle, FitOptions};
use gtnar::inference::{simulation_metrics, GroundTruth, ReplicateOutcome};
use gtnar::io::{metric_report_csv, metric_report_json};
use gtnar::model::{gen_covariates, simulate, stability_check};
use gtnar::rng::{derive_seed, streams};
use gtnar::selection::select;

use crate::commands::fit::fit_options;
use crate::commands::metrics::print_report;
use crate::commands::{emit_json, emit_text, output_dir};
use crate::config::{build_scenario, load_config, ExperimentConfig, Scenario};

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Output directory (default: config's `out` field).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicates (default: all cores).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

fn run_replicate(
    r: usize,
    master_seed: u64,
    config: &ExperimentConfig,
    scenario: &Scenario,
    options: &FitOptions,
) -> Result<ReplicateOutcome> {
    let covariate_seed = derive_seed(master_seed, streams::COVARIATES + r as u64);
    let noise_seed = derive_seed(master_seed, streams::NOISE + r as u64);
    let estimation_seed = derive_seed(master_seed, streams::ESTIMATION + r as u64);

    let panel = gen_covariates(
        &config.dims,
        &scenario.params.covariate_counts(),
        config.burn_in + config.t_len,
        covariate_seed,
    )?;
    let series = simulate(
        &scenario.params,
        &scenario.networks,
        &scenario.memberships,
        &panel,
        config.t_len,
        config.burn_in,
        noise_seed,
    )?;
    let observed = panel.tail(config.t_len)?;
    let options = FitOptions { seed: estimation_seed, ..options.clone() };

    let fitted = fit(&series, &scenario.networks, &observed, &config.group_counts, &options)?;
    let oracle = fit_oracle(&series, &scenario.networks, &observed, &scenario.memberships)?;
    let selected = match &config.g_max {
        Some(g_max) => Some(
            select(&series, &scenario.networks, &observed, g_max, config.kappa, &options)?.chosen,
        ),
        None => None,
    };
    Ok(ReplicateOutcome { fit: fitted, oracle: Some(oracle), selected })
}

fn duration_secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

pub fn run(args: &BenchmarkArgs) -> Result<()> {
    let (config, base) = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let out = output_dir(args.out.as_deref(), config.out.as_ref().map(|o| base.join(o)))?;

    let scenario = build_scenario(&config, &base, seed)?;
    let report = stability_check(&scenario.params);
    if !report.stable {
        return Err(Error::Unstable { max_abs: report.max_abs, worst_tuple: report.worst_tuple });
    }
    let options = fit_options(0, config.max_iter, config.trials);
    let replicates = config.replicates;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Computation(format!("worker pool: {}", e)))?;

    let started = Instant::now();
    let results: Vec<(Result<ReplicateOutcome>, Duration)> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let clock = Instant::now();
                let outcome = run_replicate(r, seed, &config, &scenario, &options);
                let elapsed = clock.elapsed();
                match &outcome {
                    Ok(_) => log::info!("replicate {} done in {:.2}s", r, duration_secs(elapsed)),
                    Err(e) => log::warn!("replicate {} failed: {}", r, e),
                }
                (outcome, elapsed)
            })
            .collect()
    });
    let total = started.elapsed();

    let mut outcomes = Vec::with_capacity(replicates);
    let mut durations = Vec::with_capacity(replicates);
    let mut failures = Vec::new();
    for (r, (outcome, elapsed)) in results.into_iter().enumerate() {
        durations.push(duration_secs(elapsed));
        match outcome {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if 5 * failures.len() >= replicates {
        let (r, first) = &failures[0];
        return Err(Error::Estimation(format!(
            "{} of {} replicates failed; first failure (replicate {}): {}",
            failures.len(),
            replicates,
            r,
            first
        )));
    }

    let truth =
        GroundTruth { params: scenario.params.clone(), memberships: scenario.memberships.clone() };
    let report = simulation_metrics(&outcomes, &truth)?;

    let mut doc = metric_report_json(&report);
    let object = doc.as_object_mut().expect("report document is an object");
    object.insert("seed".into(), json!(seed));
    object.insert(
        "scenario".into(),
        serde_json::Value::Object(scenario.metadata(&config, &[])),
    );
    object.insert(
        "failures".into(),
        json!(failures
            .iter()
            .map(|(r, e)| json!({ "replicate": r, "error": e }))
            .collect::<Vec<_>>()),
    );
    let mean = durations.iter().sum::<f64>() / durations.len().max(1) as f64;
    let slowest = durations.iter().cloned().fold(0.0f64, f64::max);
    object.insert(
        "timing".into(),
        json!({
            "total_seconds": duration_secs(total),
            "replicate_mean_seconds": mean,
            "replicate_max_seconds": slowest,
        }),
    );

    emit_json(&out, "metrics.json", &doc)?;
    emit_text(&out, "metrics.csv", &metric_report_csv(&report))?;

    println!(
        "benchmark: {} replicates ({} failed) in {:.2}s (mean {:.2}s, max {:.2}s per replicate)",
        replicates,
        failures.len(),
        duration_secs(total),
        mean,
        slowest
    );
    print_report(&report);
    Ok(())
}
