//! `gtnar fit`: estimate parameters and memberships on a dataset bundle.

use std::path::PathBuf;

use clap::Args;

use gtnar::error::{Error, Result};
use gtnar::estimator::{fit, fit_oracle, FitOptions, FitResult};
use gtnar::inference::{coefficient_inference, residual_variance, InferenceResult};
use gtnar::io::{fit_result_json, inference_json, load_dataset};

use crate::commands::{emit_json, output_dir};
use crate::tables;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset manifest JSON.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Group counts per mode, e.g. `2,2`.
    #[arg(long, value_delimiter = ',', value_name = "G1,G2,...", required_unless_present = "oracle")]
    pub g: Option<Vec<usize>>,
    /// Output directory (default: current directory).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for initialization candidates.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration cap for the alternating minimization.
    #[arg(long, value_name = "N")]
    pub max_iter: Option<usize>,
    /// Initialization restarts per strategy.
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Fit at the true memberships recorded in the manifest.
    #[arg(long)]
    pub oracle: bool,
}

pub(crate) fn fit_options(seed: u64, max_iter: Option<usize>, trials: Option<usize>) -> FitOptions {
    let defaults = FitOptions::default();
    FitOptions {
        seed,
        max_iter: max_iter.unwrap_or(defaults.max_iter),
        n_trials: trials.unwrap_or(defaults.n_trials),
        ..defaults
    }
}

/// Plug-in inference for a fit; `None` with a warning when the residual
/// degrees of freedom are exhausted.
pub(crate) fn try_inference(fitted: &FitResult) -> Option<InferenceResult> {
    match residual_variance(fitted).and_then(|s2| coefficient_inference(fitted, s2)) {
        Ok(inference) => Some(inference),
        Err(e) => {
            log::warn!("skipping inference: {}", e);
            None
        }
    }
}

pub(crate) fn coefficient_table(inference: &InferenceResult) -> String {
    let rows: Vec<Vec<String>> = inference
        .coefficients
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                tables::num(c.estimate),
                tables::num(c.std_error),
                format!("[{}, {}]", tables::num(c.ci_lower), tables::num(c.ci_upper)),
                tables::num(c.p_value),
            ]
        })
        .collect();
    tables::render(&["coefficient", "estimate", "std.error", "95% CI", "p-value"], &rows)
}

pub fn run(args: &FitArgs) -> Result<()> {
    let bundle = load_dataset(&args.manifest)?;
    let out = output_dir(args.out.as_deref(), None)?;
    let options = fit_options(args.seed, args.max_iter, args.trials);

    let fitted = if args.oracle {
        let memberships = bundle.memberships.as_ref().ok_or_else(|| {
            Error::Validation("--oracle needs membership files in the manifest".into())
        })?;
        fit_oracle(&bundle.series, &bundle.networks, &bundle.covariates, memberships)?
    } else {
        let g = args.g.as_ref().expect("clap enforces --g without --oracle");
        fit(&bundle.series, &bundle.networks, &bundle.covariates, g, &options)?
    };

    emit_json(&out, "fit.json", &fit_result_json(&fitted))?;
    let inference = try_inference(&fitted);
    if let Some(inference) = &inference {
        emit_json(&out, "inference.json", &inference_json(inference))?;
    }

    println!(
        "fit: Q = {:.6e}, iterations = {}, converged = {}, init = {}",
        fitted.q_value,
        fitted.trace.len(),
        fitted.converged,
        fitted.init_kind
    );
    for (l, groups) in fitted.effective_groups.iter().enumerate() {
        println!("mode {}: {} occupied groups", l + 1, groups);
    }
    if let Some(inference) = &inference {
        println!("sigma^2 = {:.6}", inference.sigma2_hat);
        print!("{}", coefficient_table(inference));
    }
    Ok(())
}
