//! `gtnar metrics`: score one fitted dataset against its recorded truth.

use std::path::PathBuf;

use clap::Args;

use gtnar::error::{Error, Result};
use gtnar::estimator::{fit, fit_oracle};
use gtnar::inference::{simulation_metrics, GroundTruth, MetricReport, ReplicateOutcome};
use gtnar::io::{load_dataset, metric_report_csv, metric_report_json};
use gtnar::selection::select;

use crate::commands::fit::fit_options;
use crate::commands::{emit_json, emit_text, output_dir};
use crate::tables;

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Dataset manifest JSON; must reference memberships and parameters.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Group counts for the fit (default: the recorded truth's counts).
    #[arg(long, value_delimiter = ',', value_name = "G1,G2,...")]
    pub g: Option<Vec<usize>>,
    /// Also fit at the true memberships and report oracle error columns.
    #[arg(long)]
    pub oracle: bool,
    /// Run selection over this grid and report chosen counts.
    #[arg(long = "g-max", value_delimiter = ',', value_name = "G1,G2,...")]
    pub g_max: Option<Vec<usize>>,
    /// Penalty weight for selection; defaults to the sample-size rule.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Output directory (default: current directory).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for initialization candidates.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration cap for each fit.
    #[arg(long, value_name = "N")]
    pub max_iter: Option<usize>,
    /// Initialization restarts per strategy.
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
}

pub(crate) fn report_table(report: &MetricReport) -> String {
    let rows: Vec<Vec<String>> = report
        .blocks
        .iter()
        .map(|b| {
            vec![
                b.name.clone(),
                tables::num(b.rmse),
                tables::opt(b.rmse_oracle),
                tables::num(b.coverage),
                tables::num(b.node_rmse),
            ]
        })
        .collect();
    tables::render(&["block", "RMSE", "RMSE_oracle", "CP", "node_RMSE"], &rows)
}

pub(crate) fn print_report(report: &MetricReport) {
    print!("{}", report_table(report));
    for l in 0..report.misclustering.len() {
        println!(
            "mode {}: mis-clustering = {}, chi error = {}",
            l + 1,
            tables::num(report.misclustering[l]),
            tables::num(report.chi_error[l])
        );
    }
    let mean_pseudo =
        report.pseudo_distances.iter().sum::<f64>() / report.pseudo_distances.len().max(1) as f64;
    println!("mean pseudo-distance = {}", tables::num(mean_pseudo));
    for (l, freq) in report.selection_frequency.iter().enumerate() {
        if freq.is_empty() {
            continue;
        }
        let cells: Vec<String> =
            freq.iter().map(|(g, f)| format!("{}: {}", g, tables::num(*f))).collect();
        println!("mode {} selection frequency: {}", l + 1, cells.join(", "));
    }
}

pub fn run(args: &MetricsArgs) -> Result<()> {
    let bundle = load_dataset(&args.manifest)?;
    let out = output_dir(args.out.as_deref(), None)?;
    let options = fit_options(args.seed, args.max_iter, args.trials);

    let memberships = bundle.memberships.clone().ok_or_else(|| {
        Error::Validation("metrics needs membership files in the manifest".into())
    })?;
    let params = bundle.parameters.clone().ok_or_else(|| {
        Error::Validation("metrics needs a parameter file in the manifest".into())
    })?;
    let group_counts = args.g.clone().unwrap_or_else(|| params.group_counts());

    let fitted =
        fit(&bundle.series, &bundle.networks, &bundle.covariates, &group_counts, &options)?;
    let oracle = if args.oracle {
        Some(fit_oracle(&bundle.series, &bundle.networks, &bundle.covariates, &memberships)?)
    } else {
        None
    };
    let selected = match &args.g_max {
        Some(g_max) => Some(
            select(&bundle.series, &bundle.networks, &bundle.covariates, g_max, args.kappa, &options)?
                .chosen,
        ),
        None => None,
    };

    let truth = GroundTruth { params, memberships };
    let outcome = ReplicateOutcome { fit: fitted, oracle, selected };
    let report = simulation_metrics(&[outcome], &truth)?;

    emit_json(&out, "metrics.json", &metric_report_json(&report))?;
    emit_text(&out, "metrics.csv", &metric_report_csv(&report))?;
    print_report(&report);
    Ok(())
}
