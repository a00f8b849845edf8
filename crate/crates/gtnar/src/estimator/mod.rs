//! Alternating least-squares estimation with latent group memberships.
//!
//! Estimation alternates two exact minimization steps until the memberships
//! stop moving: given memberships, the stacked group coefficients solve a
//! positive semi-definite normal system; given coefficients, every node of
//! every mode picks the group minimizing its slice's squared residuals. Both
//! steps never increase the objective, so the iteration descends to a local
//! minimum; several initialization candidates are run to completion and the
//! best final objective wins.

mod cells;
mod init;
mod kmeans;
mod ldlt;
mod sweep;
mod system;

use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

pub use system::{build_design_block, solve_params, NormalSystem, XiLayout};
pub(crate) use system::m_inverse;

use crate::error::{Error, Result};
use crate::model::{CovariatePanel, GroupedParameters, TensorSeries};
use crate::netgen::{GroupAssignment, NetworkLayer};
use crate::rng::{derive_rng, streams};
pub(crate) use cells::CellStats;

/// Estimation settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Cap on alternating iterations per initialization candidate.
    pub max_iter: usize,
    /// Candidates drawn per initialization family.
    pub n_trials: usize,
    /// Seed for initialization randomness.
    pub seed: u64,
    /// Relative objective decrease treated as a stall; guards against
    /// membership cycles that no longer improve the fit.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, n_trials: 3, seed: 0, rel_tol: 1e-10 }
    }
}

/// Objective value and membership movement of one alternating iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStat {
    pub q_value: f64,
    pub membership_changes: usize,
}

/// Fitted model: coefficients, memberships, and the final normal system.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Group parameters rebuilt from `xi`; `noise_sd` holds the plug-in
    /// residual standard deviation.
    pub params: GroupedParameters,
    /// Stacked coefficient vector.
    pub xi: Vec<f64>,
    /// Estimated memberships per mode.
    pub memberships: Vec<GroupAssignment>,
    /// Residual sum of squares at the returned estimate, by direct summation.
    pub q_value: f64,
    /// Per-iteration objective and membership changes of the winning
    /// candidate; the objective trace never increases.
    pub trace: Vec<IterationStat>,
    /// False only when the iteration cap was exhausted.
    pub converged: bool,
    /// Groups with at least one member, per mode.
    pub effective_groups: Vec<usize>,
    /// Normal system at the final state, for plug-in inference.
    pub system: NormalSystem,
    /// Shape of the fitted data.
    pub dims: Vec<usize>,
    pub t_len: usize,
    /// Initialization family of the winning candidate.
    pub init_kind: String,
}

impl FitResult {
    /// Number of scalar observations `T * prod(N_l)`.
    pub fn n_obs(&self) -> usize {
        self.dims.iter().product::<usize>() * self.t_len
    }
}

/// Scored initialization candidate.
#[derive(Debug, Clone)]
pub struct InitCandidateScore {
    pub memberships: Vec<GroupAssignment>,
    /// Objective after one alternating iteration from this start.
    pub score: f64,
    pub kind: String,
}

fn labels_of(memberships: &[GroupAssignment]) -> Vec<Vec<usize>> {
    memberships.iter().map(|g| g.labels().to_vec()).collect()
}

fn assignments_from(labels: &[Vec<usize>], layout: &XiLayout) -> Result<Vec<GroupAssignment>> {
    labels
        .iter()
        .zip(layout.group_counts())
        .map(|(l, &g)| GroupAssignment::new(l.clone(), g))
        .collect()
}

fn layout_for(
    covariates: &CovariatePanel,
    memberships: &[GroupAssignment],
) -> Result<XiLayout> {
    XiLayout::new(
        memberships.iter().map(GroupAssignment::group_count).collect(),
        covariates.covariate_counts(),
    )
}

/// Least-squares objective: the sum over cells and times of the squared
/// residual of the observation against its feature/coefficient inner
/// product.
pub fn objective_q(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    xi: &[f64],
    memberships: &[GroupAssignment],
) -> Result<f64> {
    let layout = layout_for(covariates, memberships)?;
    if xi.len() != layout.k() {
        return Err(Error::Shape(format!(
            "coefficient vector of length {}, layout needs {}",
            xi.len(),
            layout.k()
        )));
    }
    check_membership_dims(series, memberships)?;
    system::objective_direct(series, networks, covariates, &labels_of(memberships), &layout, xi)
}

fn check_membership_dims(series: &TensorSeries, memberships: &[GroupAssignment]) -> Result<()> {
    if memberships.len() != series.dims().len() {
        return Err(Error::Shape(format!(
            "{} membership modes for an order-{} series",
            memberships.len(),
            series.dims().len()
        )));
    }
    for (l, g) in memberships.iter().enumerate() {
        if g.n_nodes() != series.dims()[l] {
            return Err(Error::Shape(format!(
                "mode {}: {} membership nodes for extent {}",
                l,
                g.n_nodes(),
                series.dims()[l]
            )));
        }
    }
    Ok(())
}

/// Assembles the normal system of the coefficient step at the given
/// memberships. Every group must have at least one member.
pub fn assemble_normal_system(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    memberships: &[GroupAssignment],
) -> Result<NormalSystem> {
    check_membership_dims(series, memberships)?;
    let cells = CellStats::build(series, networks, covariates)?;
    let layout = layout_for(covariates, memberships)?;
    let labels = labels_of(memberships);
    if let Some((mode, group)) = system::first_empty_group(&labels, &layout) {
        return Err(Error::EmptyGroup { mode, group });
    }
    let tuples = system::tuple_stats(&cells, &labels, &layout);
    Ok(system::assemble_from_tuples(&layout, &cells, &tuples))
}

/// Reassigns every node of one mode to its objective-minimizing group,
/// holding the coefficients and the other modes fixed. Returns the updated
/// assignment and the number of nodes that moved.
pub fn update_memberships_mode(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    xi: &[f64],
    memberships: &[GroupAssignment],
    mode: usize,
) -> Result<(GroupAssignment, usize)> {
    let layout = layout_for(covariates, memberships)?;
    if mode >= layout.mode_count() {
        return Err(Error::Shape(format!(
            "mode {} out of range for order {}",
            mode,
            layout.mode_count()
        )));
    }
    if xi.len() != layout.k() {
        return Err(Error::Shape(format!(
            "coefficient vector of length {}, layout needs {}",
            xi.len(),
            layout.k()
        )));
    }
    check_membership_dims(series, memberships)?;
    let cells = CellStats::build(series, networks, covariates)?;
    let mut labels = labels_of(memberships);
    let changes = sweep::sweep_mode(&cells, &mut labels, &layout, xi, mode);
    Ok((GroupAssignment::new(labels[mode].clone(), layout.group_counts()[mode])?, changes))
}

struct AlsRun {
    xi: Vec<f64>,
    labels: Vec<Vec<usize>>,
    trace: Vec<IterationStat>,
    converged: bool,
    q_quad: f64,
}

/// One alternating run from a fixed starting assignment.
fn run_als(
    cells: &CellStats,
    layout: &XiLayout,
    mut labels: Vec<Vec<usize>>,
    max_iter: usize,
    rel_tol: f64,
) -> Result<AlsRun> {
    let q_modes = layout.mode_count();
    let mut xi: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev_q = f64::INFINITY;

    for _ in 0..max_iter {
        let tuples = system::tuple_stats(cells, &labels, layout);
        let sys = system::assemble_from_tuples(layout, cells, &tuples);
        let active = system::active_coordinates(&labels, layout);
        let solved = if active.iter().all(|&a| a) {
            solve_params(&sys)?
        } else if let Some(previous) = &xi {
            system::solve_with_freeze(&sys, &active, previous)?
        } else {
            let (mode, group) =
                system::first_empty_group(&labels, layout).expect("inactive implies empty");
            return Err(Error::EmptyGroup { mode, group });
        };
        xi = Some(solved);
        let xi_ref = xi.as_ref().expect("just set");

        let mut changes = 0;
        for l in 0..q_modes {
            changes += sweep::sweep_mode(cells, &mut labels, layout, xi_ref, l);
        }
        let q_value = system::objective_from_cells(cells, &labels, layout, xi_ref);
        trace.push(IterationStat { q_value, membership_changes: changes });
        if changes == 0 {
            converged = true;
            break;
        }
        if prev_q.is_finite() && prev_q - q_value <= rel_tol * prev_q.abs() {
            // Memberships keep moving without measurable improvement.
            converged = true;
            break;
        }
        prev_q = q_value;
    }

    let mut xi = xi.expect("at least one iteration");
    // When the run stopped with pending membership changes, re-solve once so
    // the returned coefficients are optimal for the returned memberships.
    if trace.last().map_or(false, |s| s.membership_changes > 0) {
        let tuples = system::tuple_stats(cells, &labels, layout);
        let sys = system::assemble_from_tuples(layout, cells, &tuples);
        let active = system::active_coordinates(&labels, layout);
        xi = system::solve_with_freeze(&sys, &active, &xi)?;
    }
    let q_quad = system::objective_from_cells(cells, &labels, layout, &xi);
    Ok(AlsRun { xi, labels, trace, converged, q_quad })
}

/// Draws and scores initialization candidates: each is advanced by one
/// alternating iteration and sorted by the resulting objective.
pub fn init_memberships(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    group_counts: &[usize],
    options: &FitOptions,
) -> Result<Vec<InitCandidateScore>> {
    let cells = CellStats::build(series, networks, covariates)?;
    let layout = XiLayout::new(group_counts.to_vec(), covariates.covariate_counts())?;
    let mut rng = derive_rng(options.seed, streams::ESTIMATION);
    let candidates =
        init::build_candidates(&cells, covariates, group_counts, options.n_trials, &mut rng);
    let mut scored = Vec::new();
    for cand in candidates {
        if let Ok(run) = run_als(&cells, &layout, cand.labels, 1, options.rel_tol) {
            scored.push(InitCandidateScore {
                memberships: assignments_from(&run.labels, &layout)?,
                score: run.trace[0].q_value,
                kind: cand.kind.as_str().to_string(),
            });
        }
    }
    if scored.is_empty() {
        return Err(Error::Estimation("every initialization candidate failed".into()));
    }
    scored.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"));
    Ok(scored)
}

/// Fits the model with the given group counts: every initialization
/// candidate is run to convergence and the best final objective wins.
pub fn fit(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    group_counts: &[usize],
    options: &FitOptions,
) -> Result<FitResult> {
    let cells = CellStats::build(series, networks, covariates)?;
    fit_with_cells(&cells, series, networks, covariates, group_counts, options)
}

pub(crate) fn fit_with_cells(
    cells: &CellStats,
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    group_counts: &[usize],
    options: &FitOptions,
) -> Result<FitResult> {
    let layout = XiLayout::new(group_counts.to_vec(), covariates.covariate_counts())?;
    for (l, (&g, &n)) in group_counts.iter().zip(&cells.dims).enumerate() {
        if g > n {
            return Err(Error::Validation(format!(
                "mode {}: {} groups for {} nodes",
                l, g, n
            )));
        }
    }
    let mut rng: ChaCha8Rng = derive_rng(options.seed, streams::ESTIMATION);
    let candidates =
        init::build_candidates(cells, covariates, group_counts, options.n_trials, &mut rng);

    // Identical starting assignments evolve identically; keep the first.
    let mut seen = HashSet::new();
    let mut best: Option<(AlsRun, &'static str)> = None;
    let mut last_error: Option<Error> = None;
    for cand in &candidates {
        if !seen.insert(cand.labels.clone()) {
            continue;
        }
        match run_als(cells, &layout, cand.labels.clone(), options.max_iter, options.rel_tol) {
            Ok(run) => {
                let better = best.as_ref().map_or(true, |(b, _)| run.q_quad < b.q_quad);
                if better {
                    best = Some((run, cand.kind.as_str()));
                }
            }
            Err(err) => last_error = Some(err),
        }
    }
    let (run, kind) = best.ok_or_else(|| {
        Error::Estimation(format!(
            "all {} initialization candidates failed, last error: {}",
            candidates.len(),
            last_error.map_or_else(|| "unknown".to_string(), |e| e.to_string())
        ))
    })?;

    finish_fit(cells, series, networks, covariates, layout, run, kind)
}

fn finish_fit(
    cells: &CellStats,
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    layout: XiLayout,
    run: AlsRun,
    kind: &str,
) -> Result<FitResult> {
    let q_value =
        system::objective_direct(series, networks, covariates, &run.labels, &layout, &run.xi)?;
    let tuples = system::tuple_stats(cells, &run.labels, &layout);
    let sys = system::assemble_from_tuples(&layout, cells, &tuples);
    let memberships = assignments_from(&run.labels, &layout)?;
    let effective_groups = memberships
        .iter()
        .map(|g| g.counts().iter().filter(|&&c| c > 0).count())
        .collect();

    let n_obs = cells.n_cells * cells.t_len;
    let dof = n_obs.saturating_sub(layout.k());
    let noise_sd = if dof > 0 { (q_value / dof as f64).sqrt() } else { 0.0 };
    let params = layout.params_from_xi(&run.xi, noise_sd)?;

    Ok(FitResult {
        params,
        xi: run.xi,
        memberships,
        q_value,
        trace: run.trace,
        converged: run.converged,
        effective_groups,
        system: sys,
        dims: cells.dims.clone(),
        t_len: cells.t_len,
        init_kind: kind.to_string(),
    })
}

/// Single coefficient solve at known memberships, the infeasible benchmark
/// against which estimated memberships are judged.
pub fn fit_oracle(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    memberships: &[GroupAssignment],
) -> Result<FitResult> {
    check_membership_dims(series, memberships)?;
    let cells = CellStats::build(series, networks, covariates)?;
    let layout = layout_for(covariates, memberships)?;
    let labels = labels_of(memberships);
    if let Some((mode, group)) = system::first_empty_group(&labels, &layout) {
        return Err(Error::EmptyGroup { mode, group });
    }
    let tuples = system::tuple_stats(&cells, &labels, &layout);
    let sys = system::assemble_from_tuples(&layout, &cells, &tuples);
    let xi = solve_params(&sys)?;
    let q_quad = system::objective_from_cells(&cells, &labels, &layout, &xi);
    let run = AlsRun {
        xi,
        labels,
        trace: vec![IterationStat { q_value: q_quad, membership_changes: 0 }],
        converged: true,
        q_quad,
    };
    finish_fit(&cells, series, networks, covariates, layout, run, "oracle")
}
