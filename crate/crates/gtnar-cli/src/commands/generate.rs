//! `gtnar generate`: draw one dataset bundle from an experiment config.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use gtnar::error::{Error, Result};
use gtnar::io::save_dataset;
use gtnar::model::{gen_covariates, simulate, stability_check};
use gtnar::rng::{derive_seed, streams};

use crate::config::{build_scenario, load_config};
use crate::commands::output_dir;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Output directory for the bundle (default: config's `out` field).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let (config, base) = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let out = output_dir(args.out.as_deref(), config.out.as_ref().map(|o| base.join(o)))?;

    let scenario = build_scenario(&config, &base, seed)?;
    let report = stability_check(&scenario.params);
    if !report.stable {
        return Err(Error::Unstable { max_abs: report.max_abs, worst_tuple: report.worst_tuple });
    }

    let covariate_counts = scenario.params.covariate_counts();
    let covariate_seed = derive_seed(seed, streams::COVARIATES);
    let noise_seed = derive_seed(seed, streams::NOISE);
    let panel = gen_covariates(
        &config.dims,
        &covariate_counts,
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
    let observed_covariates = panel.tail(config.t_len)?;

    let metadata = scenario.metadata(
        &config,
        &[("covariate_seed", json!(covariate_seed)), ("noise_seed", json!(noise_seed))],
    );
    let manifest = save_dataset(
        &out,
        seed,
        &series,
        &scenario.networks,
        &observed_covariates,
        Some(&scenario.memberships),
        Some(&scenario.params),
        metadata,
    )?;

    println!(
        "wrote dataset to {} (dims {:?}, T = {}, seed = {})",
        out.display(),
        manifest.dims,
        manifest.t_len,
        seed
    );
    Ok(())
}
