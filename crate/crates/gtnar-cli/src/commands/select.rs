//! `gtnar select`: pick group counts over a candidate grid.

use std::path::PathBuf;

use clap::Args;

use gtnar::error::Result;
use gtnar::io::{load_dataset, selection_json};
use gtnar::selection::{select, SelectionResult};

use crate::commands::{emit_json, output_dir};
use crate::commands::fit::fit_options;
use crate::tables;

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Dataset manifest JSON.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Largest group counts per mode, e.g. `4,4`.
    #[arg(long = "g-max", value_delimiter = ',', value_name = "G1,G2,...")]
    pub g_max: Vec<usize>,
    /// Penalty weight; defaults to the sample-size rule.
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

pub(crate) fn grid_table(selection: &SelectionResult) -> String {
    let rows: Vec<Vec<String>> = selection
        .grid
        .iter()
        .map(|record| {
            let note = if record.group_counts == selection.chosen {
                "chosen".to_string()
            } else {
                record.skip_reason.clone().map(|r| format!("skipped: {}", r)).unwrap_or_default()
            };
            vec![
                tables::tuple(&record.group_counts),
                tables::opt(record.q_value),
                tables::opt(record.qic),
                note,
            ]
        })
        .collect();
    tables::render(&["groups", "Q", "QIC", "note"], &rows)
}

pub fn run(args: &SelectArgs) -> Result<()> {
    let bundle = load_dataset(&args.manifest)?;
    let out = output_dir(args.out.as_deref(), None)?;
    let options = fit_options(args.seed, args.max_iter, args.trials);

    let selection = select(
        &bundle.series,
        &bundle.networks,
        &bundle.covariates,
        &args.g_max,
        args.kappa,
        &options,
    )?;

    emit_json(&out, "selection.json", &selection_json(&selection))?;
    print!("{}", grid_table(&selection));
    println!("chosen: {} at kappa = {:.6e}", tables::tuple(&selection.chosen), selection.kappa);
    Ok(())
}
