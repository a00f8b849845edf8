//! Group-count selection by an information criterion.
//!
//! Every candidate tuple of group counts inside a box `[1, g_max_l]` is fitted
//! and scored by the penalized log objective. Per-cell sufficient statistics
//! are shared across the whole grid, so each extra tuple costs only its
//! alternating iterations.

use crate::error::{Error, Result};
use crate::estimator::{fit_with_cells, CellStats, FitOptions, FitResult};
use crate::model::{CovariatePanel, TensorSeries};
use crate::netgen::NetworkLayer;

/// Penalized objective score of a fit: `ln(Q) + kappa * sum(G_l)`.
///
/// A perfect fit (`q_value == 0`, possible only on noiseless data) scores
/// negative infinity so it always wins; ties are resolved by [`select`]
/// toward smaller models.
pub fn qic(fit: &FitResult, kappa: f64) -> f64 {
    let group_counts: Vec<usize> =
        fit.memberships.iter().map(|g| g.group_count()).collect();
    qic_from_parts(fit.q_value, &group_counts, kappa)
}

/// [`qic`] on raw pieces, for callers without a full fit at hand.
pub fn qic_from_parts(q_value: f64, group_counts: &[usize], kappa: f64) -> f64 {
    if q_value <= 0.0 {
        return f64::NEG_INFINITY;
    }
    q_value.ln() + kappa * group_counts.iter().sum::<usize>() as f64
}

/// Default penalty weight `1 / (40 ln(T) T^(1/8))` for `T >= 2` observed
/// transitions.
pub fn default_kappa(t_len: usize) -> f64 {
    assert!(t_len >= 2, "penalty weight needs at least two time steps");
    let t = t_len as f64;
    1.0 / (40.0 * t.ln() * t.powf(0.125))
}

/// Outcome of one grid tuple: either a scored fit or the reason it was
/// skipped.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub group_counts: Vec<usize>,
    pub q_value: Option<f64>,
    pub qic: Option<f64>,
    pub converged: Option<bool>,
    pub init_kind: Option<String>,
    pub skip_reason: Option<String>,
}

/// Scored grid with the chosen tuple and its fit.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Tuple attaining the minimum score; ties go to the smaller total group
    /// count, then the lexicographically smaller tuple.
    pub chosen: Vec<usize>,
    /// Penalty weight used for every tuple.
    pub kappa: f64,
    /// One record per grid tuple, in lexicographic order.
    pub grid: Vec<SelectionRecord>,
    /// Fit of the chosen tuple.
    pub best_fit: FitResult,
}

impl SelectionResult {
    /// Record of the chosen tuple.
    pub fn chosen_record(&self) -> &SelectionRecord {
        self.grid
            .iter()
            .find(|r| r.group_counts == self.chosen)
            .expect("chosen tuple is on the grid")
    }
}

fn grid_tuples(g_max: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = g_max.iter().product();
    let mut tuples = Vec::with_capacity(total);
    let mut current = vec![1usize; g_max.len()];
    loop {
        tuples.push(current.clone());
        // Advance the last coordinate first so the listing is lexicographic.
        let mut l = g_max.len();
        loop {
            if l == 0 {
                return tuples;
            }
            l -= 1;
            if current[l] < g_max[l] {
                current[l] += 1;
                break;
            }
            current[l] = 1;
        }
    }
}

/// Fits every group-count tuple in the box `[1, g_max]` and returns the one
/// minimizing the penalized score. `kappa` defaults to
/// [`default_kappa`] at the observed transition count.
pub fn select(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    g_max: &[usize],
    kappa: Option<f64>,
    options: &FitOptions,
) -> Result<SelectionResult> {
    if g_max.len() != series.dims().len() {
        return Err(Error::Shape(format!(
            "{} grid bounds for an order-{} series",
            g_max.len(),
            series.dims().len()
        )));
    }
    if g_max.iter().any(|&g| g == 0) {
        return Err(Error::Validation("grid bounds must be at least 1".into()));
    }
    if kappa.is_none() && series.t_max() < 2 {
        return Err(Error::Validation(
            "the default penalty weight needs at least two transitions; pass kappa explicitly"
                .into(),
        ));
    }
    let kappa = kappa.unwrap_or_else(|| default_kappa(series.t_max()));
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::Validation(format!(
            "penalty weight must be finite and nonnegative, got {}",
            kappa
        )));
    }

    let cells = CellStats::build(series, networks, covariates)?;
    let mut grid = Vec::new();
    let mut best: Option<(f64, usize, Vec<usize>, FitResult)> = None;
    for tuple in grid_tuples(g_max) {
        match fit_with_cells(&cells, series, networks, covariates, &tuple, options) {
            Ok(fit) => {
                let score = qic_from_parts(fit.q_value, &tuple, kappa);
                let total: usize = tuple.iter().sum();
                grid.push(SelectionRecord {
                    group_counts: tuple.clone(),
                    q_value: Some(fit.q_value),
                    qic: Some(score),
                    converged: Some(fit.converged),
                    init_kind: Some(fit.init_kind.clone()),
                    skip_reason: None,
                });
                let improves = match &best {
                    None => true,
                    Some((s, t, c, _)) => {
                        score < *s
                            || (score == *s && (total < *t || (total == *t && tuple < *c)))
                    }
                };
                if improves {
                    best = Some((score, total, tuple, fit));
                }
            }
            Err(err) => grid.push(SelectionRecord {
                group_counts: tuple,
                q_value: None,
                qic: None,
                converged: None,
                init_kind: None,
                skip_reason: Some(err.to_string()),
            }),
        }
    }

    let (_, _, chosen, best_fit) = best.ok_or_else(|| {
        Error::Estimation("every group-count tuple on the grid failed to fit".into())
    })?;
    Ok(SelectionResult { chosen, kappa, grid, best_fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_covariates, simulate, GroupedParameters};
    use crate::netgen::{gen_sbm, sample_memberships, GroupAssignment};
    use crate::tensor::DenseTensor;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn qic_matches_hand_values() {
        assert_relative_eq!(
            qic_from_parts(std::f64::consts::E.powi(2), &[2, 3], 0.1),
            2.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(qic_from_parts(7.3, &[4, 9], 0.0), 7.3f64.ln(), epsilon = 1e-15);
        let low = qic_from_parts(5.0, &[2, 2], 0.25);
        let high = qic_from_parts(5.0, &[3, 4], 0.25);
        assert_relative_eq!(high - low, 0.25 * 3.0, epsilon = 1e-12);
        assert_eq!(qic_from_parts(0.0, &[2, 2], 0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn default_kappa_matches_hand_value_and_decreases() {
        // 40 * ln(20) * 20^(1/8) = 40 * 2.9957323 * 1.4541967 = 174.25760
        assert_relative_eq!(default_kappa(20), 0.005738630484474423, max_relative = 1e-9);
        for t in 2..200 {
            assert!(default_kappa(t + 1) < default_kappa(t));
        }
    }

    #[test]
    #[should_panic(expected = "two time steps")]
    fn default_kappa_rejects_degenerate_length() {
        default_kappa(1);
    }

    #[test]
    fn grid_listing_is_lexicographic_and_complete() {
        let tuples = grid_tuples(&[2, 3]);
        assert_eq!(
            tuples,
            vec![
                vec![1, 1],
                vec![1, 2],
                vec![1, 3],
                vec![2, 1],
                vec![2, 2],
                vec![2, 3],
            ]
        );
    }

    fn separated_params() -> GroupedParameters {
        GroupedParameters::new(
            vec![vec![0.25, -0.25], vec![0.3, -0.2]],
            vec![
                DMatrix::from_row_slice(2, 1, &[1.0, -0.6]),
                DMatrix::from_row_slice(2, 1, &[0.8, -0.9]),
            ],
            DenseTensor::new(vec![2, 2], vec![0.2, -0.1, -0.2, 0.3]).unwrap(),
            0.0,
        )
        .unwrap()
    }

    struct Sim {
        series: crate::model::TensorSeries,
        networks: Vec<NetworkLayer>,
        covariates: CovariatePanel,
    }

    fn noiseless_two_group_sim(seed: u64) -> Sim {
        let dims = [12usize, 10];
        let memberships: Vec<GroupAssignment> = dims
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..)
                    .map(|s| sample_memberships(n, 2, None, seed + l as u64 + 1000 * s).unwrap())
                    .find(|g| g.empty_groups().is_empty())
                    .unwrap()
            })
            .collect();
        let networks: Vec<NetworkLayer> = memberships
            .iter()
            .enumerate()
            .map(|(l, g)| {
                (0..)
                    .map(|s| gen_sbm(g, 0.9, 0.5, seed + 10 + l as u64 + 1000 * s).unwrap())
                    .find(|w| w.isolated_nodes().is_empty())
                    .unwrap()
            })
            .collect();
        let covariates = gen_covariates(&dims, &[1, 1], 10, seed + 20).unwrap();
        let series = simulate(
            &separated_params(),
            &networks,
            &memberships,
            &covariates,
            10,
            0,
            seed + 30,
        )
        .unwrap();
        Sim { series, networks, covariates }
    }

    #[test]
    fn noiseless_selection_recovers_the_true_tuple() {
        let sim = noiseless_two_group_sim(5);
        // A heavy penalty dominates floating-point differences between the
        // exact fits of the true tuple and of over-fitted tuples.
        let result = select(
            &sim.series,
            &sim.networks,
            &sim.covariates,
            &[3, 3],
            Some(10.0),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(result.chosen, vec![2, 2]);
        assert_eq!(result.grid.len(), 9);
        assert_eq!(result.kappa, 10.0);
        let chosen = result.chosen_record();
        assert!(chosen.skip_reason.is_none());
        assert!(chosen.q_value.unwrap() < 1e-10);
    }

    #[test]
    fn trivial_grid_chooses_the_only_tuple() {
        let sim = noiseless_two_group_sim(6);
        let result = select(
            &sim.series,
            &sim.networks,
            &sim.covariates,
            &[1, 1],
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(result.chosen, vec![1, 1]);
        assert_eq!(result.grid.len(), 1);
        assert_relative_eq!(result.kappa, default_kappa(10), epsilon = 1e-15);
    }

    #[test]
    fn infeasible_tuples_are_recorded_as_skipped() {
        let sim = noiseless_two_group_sim(7);
        // Mode 2 has 10 nodes; asking for up to 11 groups leaves the last
        // column of the grid unfittable.
        let result = select(
            &sim.series,
            &sim.networks,
            &sim.covariates,
            &[1, 11],
            Some(0.1),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(result.grid.len(), 11);
        let skipped: Vec<&SelectionRecord> =
            result.grid.iter().filter(|r| r.skip_reason.is_some()).collect();
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].group_counts, vec![1, 11]);
        assert!(result.chosen[1] <= 10);
    }

    #[test]
    fn chosen_tuple_attains_the_grid_minimum() {
        let sim = noiseless_two_group_sim(8);
        let result = select(
            &sim.series,
            &sim.networks,
            &sim.covariates,
            &[3, 2],
            Some(2.0),
            &FitOptions::default(),
        )
        .unwrap();
        let best = result.chosen_record().qic.unwrap();
        for record in &result.grid {
            if let Some(score) = record.qic {
                assert!(best <= score);
            }
        }
    }
}
