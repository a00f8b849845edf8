//! Plug-in asymptotic inference and simulation evaluation metrics.
//!
//! Inference treats the fitted coefficient vector as approximately normal
//! with covariance `sigma2 * M^(-1)`, where `M` is the final normal system
//! matrix. The rest of the module scores estimates against a known truth:
//! distances between node-level parameter tensors, label-permutation-aware
//! mis-clustering rates, majority-map error rates for mismatched group
//! counts, and replicate-level aggregates (RMSE, coverage, selection
//! frequencies).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::{m_inverse, FitResult, XiLayout};
use crate::model::{flatten_theta, FeatureLayout, GroupedParameters};
use crate::netgen::GroupAssignment;
use crate::tensor::{advance, strides, DenseTensor};

/// Half-width multiplier of the reported 95% confidence intervals.
const CI_MULTIPLIER: f64 = 1.96;

/// One coefficient with its standard error, confidence interval, and
/// two-sided p-value against zero.
#[derive(Debug, Clone)]
pub struct CoefficientSummary {
    /// Human-readable coordinate name, 1-based groups and modes.
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

/// Plug-in inference output for a fitted model.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub sigma2_hat: f64,
    /// `sigma2_hat * M^(-1)`, symmetric positive semi-definite.
    pub covariance: DMatrix<f64>,
    /// One row per stacked coefficient, in layout order.
    pub coefficients: Vec<CoefficientSummary>,
}

/// Residual variance estimate `Q / (T * prod(N_l) - k)` with a
/// degrees-of-freedom correction for the `k` fitted coefficients.
pub fn residual_variance(fit: &FitResult) -> Result<f64> {
    let k = fit.xi.len();
    let n = fit.n_obs();
    if n <= k {
        return Err(Error::Validation(format!(
            "no degrees of freedom: {} observations for {} coefficients",
            n, k
        )));
    }
    Ok(fit.q_value / (n - k) as f64)
}

/// Standard errors, confidence intervals, and p-values from the normal
/// approximation with covariance `sigma2_hat * M^(-1)`.
pub fn coefficient_inference(fit: &FitResult, sigma2_hat: f64) -> Result<InferenceResult> {
    if !sigma2_hat.is_finite() || sigma2_hat < 0.0 {
        return Err(Error::Validation(format!(
            "residual variance must be finite and nonnegative, got {}",
            sigma2_hat
        )));
    }
    let mut covariance = m_inverse(&fit.system)?;
    covariance *= sigma2_hat;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let layout = &fit.system.layout;
    let coefficients = (0..layout.k())
        .map(|j| {
            let estimate = fit.xi[j];
            let std_error = covariance[(j, j)].max(0.0).sqrt();
            let p_value = if std_error > 0.0 {
                2.0 * (1.0 - normal.cdf((estimate / std_error).abs()))
            } else if estimate == 0.0 {
                1.0
            } else {
                0.0
            };
            CoefficientSummary {
                name: layout.describe(j),
                estimate,
                std_error,
                ci_lower: estimate - CI_MULTIPLIER * std_error,
                ci_upper: estimate + CI_MULTIPLIER * std_error,
                p_value,
            }
        })
        .collect();
    Ok(InferenceResult { sigma2_hat, covariance, coefficients })
}

/// Average squared distance between two node-level parameter tensors of
/// shape `[N_1, ..., N_q, m]`: per-mode averages of the squared coefficient
/// block differences plus the cell-average squared difference of the lag
/// coefficient.
///
/// Both tensors are expected to be group-structured, as produced by
/// [`flatten_theta`]; the mode blocks are then constant across
/// the other indices and no label alignment is involved.
pub fn pseudo_distance(
    theta_hat: &DenseTensor,
    theta_true: &DenseTensor,
    layout: &FeatureLayout,
) -> Result<f64> {
    if theta_hat.dims() != theta_true.dims() {
        return Err(Error::Shape(format!(
            "node parameter tensors of shapes {:?} and {:?}",
            theta_hat.dims(),
            theta_true.dims()
        )));
    }
    let dims = theta_hat.dims();
    let q = layout.mode_count();
    if dims.len() != q + 1 || dims[q] != layout.m() {
        return Err(Error::Shape(format!(
            "tensor of shape {:?} does not match a {}-mode layout with {} features",
            dims,
            q,
            layout.m()
        )));
    }
    let node_dims = &dims[..q];
    let n_cells: usize = node_dims.iter().product();
    let node_strides = strides(node_dims);
    let hat = theta_hat.vectorize();
    let tru = theta_true.vectorize();

    let mut total = 0.0;
    for l in 0..q {
        let offset = layout.mode_offset(l);
        let len = layout.covariate_counts()[l] + 1;
        let mut sum = 0.0;
        for node in 0..node_dims[l] {
            // Representative cell: the block only depends on this node.
            let cell = node * node_strides[l];
            for j in offset..offset + len {
                let d = hat[cell + n_cells * j] - tru[cell + n_cells * j];
                sum += d * d;
            }
        }
        total += sum / node_dims[l] as f64;
    }
    let lag = layout.lag_pos();
    let mut sum = 0.0;
    for cell in 0..n_cells {
        let d = hat[cell + n_cells * lag] - tru[cell + n_cells * lag];
        sum += d * d;
    }
    Ok(total + sum / n_cells as f64)
}

fn permutations(g: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        for i in 0..remaining.len() {
            let v = remaining.remove(i);
            current.push(v);
            rec(remaining, current, out);
            current.pop();
            remaining.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut (0..g).collect(), &mut Vec::new(), &mut out);
    out
}

/// Minimum-cost perfect matching on a square cost matrix; returns the
/// column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

fn confusion_matrix(
    est: &GroupAssignment,
    truth: &GroupAssignment,
) -> Result<Vec<Vec<usize>>> {
    if est.n_nodes() != truth.n_nodes() {
        return Err(Error::Shape(format!(
            "assignments over {} and {} nodes",
            est.n_nodes(),
            truth.n_nodes()
        )));
    }
    let mut confusion = vec![vec![0usize; truth.group_count()]; est.group_count()];
    for i in 0..est.n_nodes() {
        confusion[est.label(i)][truth.label(i)] += 1;
    }
    Ok(confusion)
}

/// Label permutation minimizing the mis-clustering rate, with the rate it
/// attains. The permutation maps estimated labels to true labels. Small
/// group counts are matched by exhaustive enumeration (lexicographically
/// first among ties), larger ones by assignment matching on the confusion
/// matrix.
pub fn label_alignment(
    est: &GroupAssignment,
    truth: &GroupAssignment,
) -> Result<(Vec<usize>, f64)> {
    if est.group_count() != truth.group_count() {
        return Err(Error::Validation(format!(
            "group counts {} and {} differ; rate comparisons across counts use the majority map",
            est.group_count(),
            truth.group_count()
        )));
    }
    let confusion = confusion_matrix(est, truth)?;
    let g = est.group_count();
    let n = est.n_nodes();
    let perm = if g <= 6 {
        let mut best: Option<(usize, Vec<usize>)> = None;
        for perm in permutations(g) {
            let matched: usize = (0..g).map(|a| confusion[a][perm[a]]).sum();
            if best.as_ref().map_or(true, |(m, _)| matched > *m) {
                best = Some((matched, perm));
            }
        }
        best.expect("at least one permutation").1
    } else {
        let cost: Vec<Vec<f64>> = confusion
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter().map(|&o| (total - o) as f64).collect()
            })
            .collect();
        hungarian(&cost)
    };
    let matched: usize = (0..g).map(|a| confusion[a][perm[a]]).sum();
    Ok((perm, (n - matched) as f64 / n as f64))
}

/// Fraction of nodes assigned to the wrong group after the best relabeling
/// of the estimated groups. Requires equal group counts.
pub fn misclustering_rate(est: &GroupAssignment, truth: &GroupAssignment) -> Result<f64> {
    label_alignment(est, truth).map(|(_, rate)| rate)
}

/// Fraction of nodes whose true label differs from the majority true label
/// of their estimated group (ties toward the smaller true label). Handles
/// differing group counts; pure over-splitting of true groups scores zero.
pub fn chi_error_rate(est: &GroupAssignment, truth: &GroupAssignment) -> Result<f64> {
    let confusion = confusion_matrix(est, truth)?;
    let n = est.n_nodes();
    let mut errors = 0usize;
    for row in &confusion {
        let majority = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(b, _)| b)
            .unwrap_or(0);
        errors += row.iter().sum::<usize>() - row[majority];
    }
    Ok(errors as f64 / n as f64)
}

/// Known data-generating state a replicate is scored against.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub params: GroupedParameters,
    pub memberships: Vec<GroupAssignment>,
}

/// Estimation output of one synthetic replicate.
#[derive(Debug)]
pub struct ReplicateOutcome {
    /// Fit at the true group counts.
    pub fit: FitResult,
    /// Fit at the true memberships, when available, for benchmark columns.
    pub oracle: Option<FitResult>,
    /// Group counts chosen by selection on this replicate, when run.
    pub selected: Option<Vec<usize>>,
}

/// Aggregate accuracy of one coefficient block across replicates.
#[derive(Debug, Clone)]
pub struct BlockMetrics {
    pub name: String,
    /// Root of the mean (over replicates) squared block error, after the
    /// per-replicate label alignment.
    pub rmse: f64,
    /// Same error for the oracle fits, when they were supplied.
    pub rmse_oracle: Option<f64>,
    /// Average coverage of the 95% intervals over the block's coefficients.
    pub coverage: f64,
    /// Node-level root mean squared error: every node contributes its own
    /// group's coefficient error, so no alignment is needed and group
    /// counts may differ from the truth.
    pub node_rmse: f64,
}

/// Coverage of one coefficient's 95% interval across replicates.
#[derive(Debug, Clone)]
pub struct CoverageEntry {
    pub name: String,
    pub coverage: f64,
}

/// Replicate-level evaluation summary.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub replicates: usize,
    pub dims: Vec<usize>,
    pub t_len: usize,
    pub blocks: Vec<BlockMetrics>,
    pub coverage_by_coefficient: Vec<CoverageEntry>,
    /// Mean mis-clustering rate per mode.
    pub misclustering: Vec<f64>,
    /// Mean majority-map error rate per mode.
    pub chi_error: Vec<f64>,
    /// Node-level parameter distance of every replicate.
    pub pseudo_distances: Vec<f64>,
    /// Per mode: relative frequency of each selected group count, over the
    /// replicates that ran selection.
    pub selection_frequency: Vec<BTreeMap<usize, f64>>,
}

/// Truth-layout coordinate reached by every estimated coordinate under the
/// per-mode label permutations.
fn aligned_slot_map(layout: &XiLayout, perms: &[Vec<usize>]) -> Vec<usize> {
    let mut map = vec![0usize; layout.k()];
    for l in 0..layout.mode_count() {
        for g in 0..layout.group_counts()[l] {
            let from = layout.theta_offset(l, g);
            let to = layout.theta_offset(l, perms[l][g]);
            for j in 0..layout.theta_len(l) {
                map[from + j] = to + j;
            }
        }
    }
    let group_dims = layout.group_counts().to_vec();
    let mut tuple = vec![0usize; group_dims.len()];
    for _ in 0..layout.alpha_count() {
        let mapped: Vec<usize> =
            tuple.iter().enumerate().map(|(l, &g)| perms[l][g]).collect();
        map[layout.alpha_pos(&tuple)] = layout.alpha_pos(&mapped);
        advance(&mut tuple, &group_dims);
    }
    map
}

/// Coefficient blocks of the stacked layout: per-mode autoregression
/// weights, per-mode covariate effects, and the lag interaction block.
fn layout_blocks(layout: &XiLayout) -> Vec<(String, Vec<usize>)> {
    let mut blocks = Vec::new();
    for l in 0..layout.mode_count() {
        let g = layout.group_counts()[l];
        blocks.push((
            format!("lambda[mode {}]", l + 1),
            (0..g).map(|j| layout.theta_offset(l, j)).collect(),
        ));
        let p = layout.theta_len(l) - 1;
        if p > 0 {
            let mut coords = Vec::with_capacity(g * p);
            for j in 0..g {
                let base = layout.theta_offset(l, j) + 1;
                coords.extend(base..base + p);
            }
            blocks.push((format!("zeta[mode {}]", l + 1), coords));
        }
    }
    blocks.push((
        "alpha".to_string(),
        (layout.alpha_offset()..layout.alpha_offset() + layout.alpha_count()).collect(),
    ));
    blocks
}

fn check_layout_match(fit: &FitResult, layout: &XiLayout, role: &str) -> Result<()> {
    let fl = &fit.system.layout;
    if fl.group_counts() != layout.group_counts()
        || (0..layout.mode_count()).any(|l| fl.theta_len(l) != layout.theta_len(l))
    {
        return Err(Error::Validation(format!(
            "{} fit has group counts {:?}, truth has {:?} (matching shapes are required)",
            role,
            fl.group_counts(),
            layout.group_counts()
        )));
    }
    Ok(())
}

/// Squared block errors of one fit against the truth coefficients, after
/// aligning estimated labels mode by mode.
fn aligned_block_errors(
    fit: &FitResult,
    truth: &GroundTruth,
    layout: &XiLayout,
    truth_xi: &[f64],
    blocks: &[(String, Vec<usize>)],
) -> Result<Vec<f64>> {
    let q = layout.mode_count();
    let mut perms = Vec::with_capacity(q);
    for l in 0..q {
        let (perm, _) = label_alignment(&fit.memberships[l], &truth.memberships[l])?;
        perms.push(perm);
    }
    let slot_of = aligned_slot_map(layout, &perms);
    let mut err_by_slot = vec![0.0; layout.k()];
    for (j, &slot) in slot_of.iter().enumerate() {
        err_by_slot[slot] = fit.xi[j] - truth_xi[slot];
    }
    Ok(blocks
        .iter()
        .map(|(_, coords)| coords.iter().map(|&s| err_by_slot[s] * err_by_slot[s]).sum())
        .collect())
}

/// Aggregates replicate fits against the truth: block RMSEs (with oracle
/// comparisons when supplied), interval coverage, mis-clustering and
/// majority-map rates, node-level distances, and selection frequencies.
pub fn simulation_metrics(
    outcomes: &[ReplicateOutcome],
    truth: &GroundTruth,
) -> Result<MetricReport> {
    if outcomes.is_empty() {
        return Err(Error::Validation("metrics need at least one replicate".into()));
    }
    let q = truth.memberships.len();
    if truth.params.mode_count() != q {
        return Err(Error::Shape(format!(
            "truth has {} membership modes for {} parameter modes",
            q,
            truth.params.mode_count()
        )));
    }
    let group_counts = truth.params.group_counts();
    for (l, g) in truth.memberships.iter().enumerate() {
        if g.group_count() != group_counts[l] {
            return Err(Error::Shape(format!(
                "mode {}: truth memberships have {} groups, parameters have {}",
                l,
                g.group_count(),
                group_counts[l]
            )));
        }
    }
    let layout = XiLayout::new(group_counts.clone(), truth.params.covariate_counts())?;
    let truth_xi = layout.xi_from_params(&truth.params)?;
    let theta_true = flatten_theta(&truth.params, &truth.memberships)?;
    let feature = layout.feature_layout();
    let blocks = layout_blocks(&layout);

    let r_total = outcomes.len() as f64;
    let mut block_sq = vec![0.0; blocks.len()];
    let mut oracle_sq = vec![0.0; blocks.len()];
    let mut oracle_n = 0usize;
    let mut covered = vec![0usize; layout.k()];
    let mut node_sq = vec![0.0; blocks.len()];
    let mut mis_sum = vec![0.0; q];
    let mut chi_sum = vec![0.0; q];
    let mut pseudo_distances = Vec::with_capacity(outcomes.len());
    let mut selected_counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); q];
    let mut selected_n = 0usize;

    let dims = outcomes[0].fit.dims.clone();
    let t_len = outcomes[0].fit.t_len;
    let n_cells: usize = dims.iter().product();
    let node_strides = strides(&dims);

    for outcome in outcomes {
        let fit = &outcome.fit;
        check_layout_match(fit, &layout, "replicate")?;
        if fit.dims != dims || fit.t_len != t_len {
            return Err(Error::Shape(
                "replicates with differing data shapes cannot be aggregated".into(),
            ));
        }
        for l in 0..q {
            mis_sum[l] += misclustering_rate(&fit.memberships[l], &truth.memberships[l])?;
            chi_sum[l] += chi_error_rate(&fit.memberships[l], &truth.memberships[l])?;
        }
        for (acc, sq) in block_sq
            .iter_mut()
            .zip(aligned_block_errors(fit, truth, &layout, &truth_xi, &blocks)?)
        {
            *acc += sq;
        }
        if let Some(oracle) = &outcome.oracle {
            check_layout_match(oracle, &layout, "oracle")?;
            for (acc, sq) in oracle_sq
                .iter_mut()
                .zip(aligned_block_errors(oracle, truth, &layout, &truth_xi, &blocks)?)
            {
                *acc += sq;
            }
            oracle_n += 1;
        }

        let inference = coefficient_inference(fit, residual_variance(fit)?)?;
        let mut perms = Vec::with_capacity(q);
        for l in 0..q {
            perms.push(label_alignment(&fit.memberships[l], &truth.memberships[l])?.0);
        }
        let slot_of = aligned_slot_map(&layout, &perms);
        for (j, &slot) in slot_of.iter().enumerate() {
            let c = &inference.coefficients[j];
            if c.ci_lower <= truth_xi[slot] && truth_xi[slot] <= c.ci_upper {
                covered[slot] += 1;
            }
        }

        let theta_hat = flatten_theta(&fit.params, &fit.memberships)?;
        pseudo_distances.push(pseudo_distance(&theta_hat, &theta_true, &feature)?);
        let hat = theta_hat.vectorize();
        let tru = theta_true.vectorize();
        let mut block_idx = 0;
        for l in 0..q {
            let p = layout.theta_len(l) - 1;
            for node in 0..dims[l] {
                let cell = node * node_strides[l];
                let col = feature.reg_pos(l);
                let d = hat[cell + n_cells * col] - tru[cell + n_cells * col];
                node_sq[block_idx] += d * d;
                for c in 0..p {
                    let col = feature.cov_pos(l, c);
                    let d = hat[cell + n_cells * col] - tru[cell + n_cells * col];
                    node_sq[block_idx + 1] += d * d;
                }
            }
            block_idx += if p > 0 { 2 } else { 1 };
        }
        let col = feature.lag_pos();
        for cell in 0..n_cells {
            let d = hat[cell + n_cells * col] - tru[cell + n_cells * col];
            node_sq[block_idx] += d * d;
        }

        if let Some(selected) = &outcome.selected {
            if selected.len() != q {
                return Err(Error::Shape(format!(
                    "selected tuple of length {} for {} modes",
                    selected.len(),
                    q
                )));
            }
            for l in 0..q {
                *selected_counts[l].entry(selected[l]).or_insert(0) += 1;
            }
            selected_n += 1;
        }
    }

    let node_divisor = |name: &str| -> f64 {
        if name == "alpha" {
            n_cells as f64
        } else {
            let l = name
                .trim_end_matches(']')
                .rsplit(' ')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .expect("block names carry the mode");
            dims[l - 1] as f64
        }
    };
    let block_metrics: Vec<BlockMetrics> = blocks
        .iter()
        .enumerate()
        .map(|(i, (name, coords))| BlockMetrics {
            name: name.clone(),
            rmse: (block_sq[i] / r_total).sqrt(),
            rmse_oracle: if oracle_n > 0 {
                Some((oracle_sq[i] / oracle_n as f64).sqrt())
            } else {
                None
            },
            coverage: coords
                .iter()
                .map(|&s| covered[s] as f64 / r_total)
                .sum::<f64>()
                / coords.len() as f64,
            node_rmse: (node_sq[i] / (r_total * node_divisor(name))).sqrt(),
        })
        .collect();

    let coverage_by_coefficient = (0..layout.k())
        .map(|s| CoverageEntry {
            name: layout.describe(s),
            coverage: covered[s] as f64 / r_total,
        })
        .collect();

    let selection_frequency = selected_counts
        .into_iter()
        .map(|counts| {
            counts
                .into_iter()
                .map(|(g, c)| (g, c as f64 / selected_n.max(1) as f64))
                .collect()
        })
        .collect();

    Ok(MetricReport {
        replicates: outcomes.len(),
        dims,
        t_len,
        blocks: block_metrics,
        coverage_by_coefficient,
        misclustering: mis_sum.iter().map(|s| s / r_total).collect(),
        chi_error: chi_sum.iter().map(|s| s / r_total).collect(),
        pseudo_distances,
        selection_frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit, fit_oracle, FitOptions};
    use crate::model::{gen_covariates, simulate, CovariatePanel, TensorSeries};
    use crate::netgen::{gen_sbm, sample_memberships, NetworkLayer};
    use approx::assert_relative_eq;

    fn two_group_params(noise_sd: f64) -> GroupedParameters {
        GroupedParameters::new(
            vec![vec![0.25, -0.25], vec![0.3, -0.2]],
            vec![
                DMatrix::from_row_slice(2, 1, &[1.0, -0.6]),
                DMatrix::from_row_slice(2, 1, &[0.8, -0.9]),
            ],
            DenseTensor::new(vec![2, 2], vec![0.2, -0.1, -0.2, 0.3]).unwrap(),
            noise_sd,
        )
        .unwrap()
    }

    struct Dataset {
        params: GroupedParameters,
        networks: Vec<NetworkLayer>,
        memberships: Vec<GroupAssignment>,
        covariates: CovariatePanel,
        series: TensorSeries,
    }

    fn make_dataset(dims: [usize; 2], t_len: usize, noise_sd: f64, seed: u64) -> Dataset {
        let params = two_group_params(noise_sd);
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
        let covariates = gen_covariates(&dims, &[1, 1], t_len, seed + 20).unwrap();
        let series =
            simulate(&params, &networks, &memberships, &covariates, t_len, 0, seed + 30)
                .unwrap();
        Dataset { params, networks, memberships, covariates, series }
    }

    fn assignment(labels: &[usize], k: usize) -> GroupAssignment {
        GroupAssignment::new(labels.to_vec(), k).unwrap()
    }

    #[test]
    fn residual_variance_is_zero_for_exact_fits() {
        let d = make_dataset([8, 6], 8, 0.0, 11);
        let fit = fit_oracle(&d.series, &d.networks, &d.covariates, &d.memberships).unwrap();
        assert!(residual_variance(&fit).unwrap() < 1e-16);
    }

    #[test]
    fn residual_variance_matches_the_classical_estimate_for_pooled_fits() {
        let d = make_dataset([6, 5], 8, 0.7, 19);
        let result =
            fit(&d.series, &d.networks, &d.covariates, &[1, 1], &FitOptions::default()).unwrap();
        // Classical: residual sum of squares over observations minus
        // coefficients, from an explicitly stacked regression.
        let k = result.xi.len();
        let n = result.n_obs();
        let sigma2 = residual_variance(&result).unwrap();
        assert_relative_eq!(sigma2, result.q_value / (n - k) as f64, epsilon = 1e-15);
        assert!(sigma2 > 0.0);
        assert_relative_eq!(
            result.params.noise_sd(),
            sigma2.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn residual_variance_rejects_saturated_fits() {
        let d = make_dataset([6, 5], 8, 0.4, 23);
        let mut fitted =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        // Shrink the recorded sample until the coefficients exhaust it.
        fitted.t_len = 0;
        assert_eq!(fitted.n_obs(), 0);
        assert!(matches!(residual_variance(&fitted), Err(Error::Validation(_))));
    }

    #[test]
    fn doubling_the_variance_doubles_the_covariance() {
        let d = make_dataset([6, 5], 8, 0.7, 31);
        let fit =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        let s2 = residual_variance(&fit).unwrap();
        let a = coefficient_inference(&fit, s2).unwrap();
        let b = coefficient_inference(&fit, 2.0 * s2).unwrap();
        for i in 0..a.covariance.nrows() {
            for j in 0..a.covariance.ncols() {
                assert_eq!(b.covariance[(i, j)], 2.0 * a.covariance[(i, j)]);
            }
        }
    }

    #[test]
    fn pooled_standard_errors_match_textbook_least_squares() {
        let d = make_dataset([6, 5], 8, 0.7, 37);
        let result =
            fit(&d.series, &d.networks, &d.covariates, &[1, 1], &FitOptions::default()).unwrap();
        let s2 = residual_variance(&result).unwrap();
        let inference = coefficient_inference(&result, s2).unwrap();
        let minv = result
            .system
            .m
            .clone()
            .try_inverse()
            .expect("pooled system is nonsingular");
        for (j, c) in inference.coefficients.iter().enumerate() {
            assert_relative_eq!(
                c.std_error,
                (s2 * minv[(j, j)]).sqrt(),
                max_relative = 1e-10
            );
            assert_relative_eq!(c.ci_lower, c.estimate - 1.96 * c.std_error, epsilon = 1e-12);
            assert_relative_eq!(c.ci_upper, c.estimate + 1.96 * c.std_error, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&c.p_value));
        }
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let d = make_dataset([6, 5], 8, 0.9, 41);
        let fit =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        let inference =
            coefficient_inference(&fit, residual_variance(&fit).unwrap()).unwrap();
        let cov = &inference.covariance;
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                assert_relative_eq!(cov[(i, j)], cov[(j, i)], max_relative = 1e-9, epsilon = 1e-12);
            }
        }
        let sym = (cov + cov.transpose()) * 0.5;
        assert!(sym.cholesky().is_some(), "covariance is not positive definite");
    }

    #[test]
    fn p_values_shrink_with_signal_strength() {
        let d = make_dataset([8, 6], 10, 0.3, 43);
        let fit =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        let inference =
            coefficient_inference(&fit, residual_variance(&fit).unwrap()).unwrap();
        // The covariate effects are large relative to the noise here, so
        // their p-values should be decisive.
        for c in &inference.coefficients {
            if c.name.starts_with("zeta") {
                assert!(c.p_value < 0.05, "{} has p {}", c.name, c.p_value);
            }
        }
    }

    #[test]
    fn pseudo_distance_of_identical_tensors_is_zero() {
        let d = make_dataset([5, 4], 4, 0.0, 47);
        let theta = flatten_theta(&d.params, &d.memberships).unwrap();
        let layout = d.params.layout();
        assert_eq!(pseudo_distance(&theta, &theta, &layout).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_distance_of_a_constant_mode_shift_is_the_block_length_square()
    {
        let d = make_dataset([5, 4], 4, 0.0, 53);
        let c = 0.3;
        let shifted = GroupedParameters::new(
            vec![
                d.params.lambda()[0].iter().map(|v| v + c).collect(),
                d.params.lambda()[1].clone(),
            ],
            vec![
                d.params.zeta()[0].map(|v| v + c),
                d.params.zeta()[1].clone(),
            ],
            d.params.alpha().clone(),
            0.0,
        )
        .unwrap();
        let theta_true = flatten_theta(&d.params, &d.memberships).unwrap();
        let theta_hat = flatten_theta(&shifted, &d.memberships).unwrap();
        let dist = pseudo_distance(&theta_hat, &theta_true, &d.params.layout()).unwrap();
        // Mode 1 carries one covariate, so each node's block differs by c in
        // two coordinates.
        assert_relative_eq!(dist, 2.0 * c * c, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_distance_matches_a_direct_double_loop() {
        let dims = [6usize, 5];
        let truth_members = vec![
            assignment(&[0, 1, 1, 0, 1, 0], 2),
            assignment(&[1, 0, 1, 0, 0], 2),
        ];
        let est_members = vec![
            assignment(&[1, 1, 0, 0, 2, 2], 3),
            assignment(&[0, 0, 1, 1, 0], 2),
        ];
        let truth_params = two_group_params(0.0);
        let est_params = GroupedParameters::new(
            vec![vec![0.21, -0.33, 0.11], vec![0.28, -0.17]],
            vec![
                DMatrix::from_row_slice(3, 1, &[0.9, -0.55, 0.2]),
                DMatrix::from_row_slice(2, 1, &[0.7, -1.0]),
            ],
            DenseTensor::new(vec![3, 2], vec![0.18, -0.12, 0.05, -0.21, 0.33, 0.0]).unwrap(),
            0.0,
        )
        .unwrap();
        let theta_true = flatten_theta(&truth_params, &truth_members).unwrap();
        let theta_hat = flatten_theta(&est_params, &est_members).unwrap();
        let dist =
            pseudo_distance(&theta_hat, &theta_true, &truth_params.layout()).unwrap();

        let mut oracle = 0.0;
        for l in 0..2 {
            let mut sum = 0.0;
            for i in 0..dims[l] {
                let hat = est_params.theta(l, est_members[l].label(i));
                let tru = truth_params.theta(l, truth_members[l].label(i));
                sum += hat
                    .iter()
                    .zip(&tru)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            oracle += sum / dims[l] as f64;
        }
        let mut sum = 0.0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                let a = est_params
                    .alpha()
                    .get(&[est_members[0].label(i), est_members[1].label(j)])
                    .unwrap();
                let b = truth_params
                    .alpha()
                    .get(&[truth_members[0].label(i), truth_members[1].label(j)])
                    .unwrap();
                sum += (a - b) * (a - b);
            }
        }
        oracle += sum / (dims[0] * dims[1]) as f64;
        assert_relative_eq!(dist, oracle, epsilon = 1e-12);
    }

    #[test]
    fn misclustering_handles_the_hand_example_and_relabelings() {
        let truth = assignment(&[0, 0, 0, 1, 1, 1], 2);
        assert_eq!(misclustering_rate(&truth, &truth).unwrap(), 0.0);
        let swapped = assignment(&[1, 1, 1, 0, 0, 0], 2);
        assert_eq!(misclustering_rate(&swapped, &truth).unwrap(), 0.0);
        let est = assignment(&[0, 0, 1, 1, 1, 1], 2);
        assert_relative_eq!(misclustering_rate(&est, &truth).unwrap(), 1.0 / 6.0);
        assert_relative_eq!(misclustering_rate(&truth, &est).unwrap(), 1.0 / 6.0);
    }

    #[test]
    fn misclustering_rejects_mismatched_group_counts() {
        let a = assignment(&[0, 1, 2], 3);
        let b = assignment(&[0, 1, 1], 2);
        assert!(matches!(misclustering_rate(&a, &b), Err(Error::Validation(_))));
    }

    fn lcg_labels(n: usize, k: usize, state: &mut u64) -> Vec<usize> {
        (0..n)
            .map(|_| {
                *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((*state >> 33) as usize) % k
            })
            .collect()
    }

    #[test]
    fn assignment_matching_agrees_with_exhaustive_enumeration() {
        let mut state = 12345u64;
        for _ in 0..20 {
            let g = 7;
            let n = 40;
            let est = assignment(&lcg_labels(n, g, &mut state), g);
            let truth = assignment(&lcg_labels(n, g, &mut state), g);
            let (perm, rate) = label_alignment(&est, &truth).unwrap();

            let mut best = usize::MAX;
            for p in permutations(g) {
                let mismatches = (0..n)
                    .filter(|&i| p[est.label(i)] != truth.label(i))
                    .count();
                best = best.min(mismatches);
            }
            assert_relative_eq!(rate, best as f64 / n as f64, epsilon = 1e-15);
            let achieved = (0..n)
                .filter(|&i| perm[est.label(i)] != truth.label(i))
                .count();
            assert_eq!(achieved, best);
        }
    }

    #[test]
    fn chi_error_matches_hand_examples() {
        let truth = assignment(&[0, 0, 0, 1, 1], 2);
        assert_eq!(chi_error_rate(&truth, &truth).unwrap(), 0.0);
        // Pure over-splitting: every estimated group sits inside one true
        // group.
        let split = assignment(&[0, 0, 1, 2, 2], 3);
        assert_eq!(chi_error_rate(&split, &truth).unwrap(), 0.0);
        // Mixed group: estimated group 1 holds true labels {0, 1, 1}.
        let mixed = assignment(&[0, 1, 0, 1, 1], 2);
        assert_relative_eq!(chi_error_rate(&mixed, &truth).unwrap(), 1.0 / 5.0);
        // Everything pooled: majority ties break toward the smaller label.
        let pooled = assignment(&[0, 0, 0, 0], 1);
        let balanced = assignment(&[0, 0, 1, 1], 2);
        assert_relative_eq!(chi_error_rate(&pooled, &balanced).unwrap(), 0.5);
    }

    #[test]
    fn chi_error_never_exceeds_misclustering_for_equal_counts() {
        let mut state = 777u64;
        for _ in 0..200 {
            let g = 3;
            let n = 12;
            let est = assignment(&lcg_labels(n, g, &mut state), g);
            let truth = assignment(&lcg_labels(n, g, &mut state), g);
            let chi = chi_error_rate(&est, &truth).unwrap();
            let mis = misclustering_rate(&est, &truth).unwrap();
            assert!(chi <= mis + 1e-15, "chi {} > mis {}", chi, mis);
        }
    }

    fn exact_outcomes(seeds: &[u64]) -> (Vec<ReplicateOutcome>, GroundTruth) {
        let base = make_dataset([8, 6], 8, 0.0, 111);
        let truth =
            GroundTruth { params: base.params.clone(), memberships: base.memberships.clone() };
        let outcomes = seeds
            .iter()
            .map(|&s| {
                let covariates = gen_covariates(&[8, 6], &[1, 1], 8, 500 + s).unwrap();
                let series = simulate(
                    &base.params,
                    &base.networks,
                    &base.memberships,
                    &covariates,
                    8,
                    0,
                    600 + s,
                )
                .unwrap();
                let fitted =
                    fit(&series, &base.networks, &covariates, &[2, 2], &FitOptions::default())
                        .unwrap();
                let oracle =
                    fit_oracle(&series, &base.networks, &covariates, &base.memberships).unwrap();
                ReplicateOutcome { fit: fitted, oracle: Some(oracle), selected: Some(vec![2, 2]) }
            })
            .collect();
        (outcomes, truth)
    }

    #[test]
    fn exact_replicates_report_zero_error_and_full_coverage() {
        let (outcomes, truth) = exact_outcomes(&[1, 2]);
        let report = simulation_metrics(&outcomes, &truth).unwrap();
        assert_eq!(report.replicates, 2);
        assert_eq!(
            report.blocks.iter().map(|b| b.name.as_str()).collect::<Vec<_>>(),
            vec!["lambda[mode 1]", "zeta[mode 1]", "lambda[mode 2]", "zeta[mode 2]", "alpha"]
        );
        for block in &report.blocks {
            assert!(block.rmse < 1e-6, "{} rmse {}", block.name, block.rmse);
            assert!(block.rmse_oracle.unwrap() < 1e-6);
            // Exact fits shrink the intervals to points at machine scale, so
            // containment of the truth is not numerically guaranteed; only
            // the rate bounds are.
            assert!((0.0..=1.0).contains(&block.coverage));
            assert!(block.node_rmse < 1e-6);
        }
        for entry in &report.coverage_by_coefficient {
            assert!((0.0..=1.0).contains(&entry.coverage), "{}", entry.name);
        }
        assert_eq!(report.misclustering, vec![0.0, 0.0]);
        assert_eq!(report.chi_error, vec![0.0, 0.0]);
        for d in &report.pseudo_distances {
            assert!(*d < 1e-12);
        }
        for freq in &report.selection_frequency {
            assert_eq!(freq.len(), 1);
            assert_eq!(freq[&2], 1.0);
        }
    }

    #[test]
    fn constant_block_error_has_the_closed_form_rmse() {
        let (mut outcomes, truth) = exact_outcomes(&[4, 5]);
        let c = 0.2;
        for outcome in &mut outcomes {
            let layout = outcome.fit.system.layout.clone();
            let mut xi = outcome.fit.xi.clone();
            for g in 0..2 {
                xi[layout.theta_offset(0, g)] += c;
            }
            outcome.fit.params = layout.params_from_xi(&xi, 0.0).unwrap();
            outcome.fit.xi = xi;
            outcome.oracle = None;
            outcome.selected = None;
        }
        let report = simulation_metrics(&outcomes, &truth).unwrap();
        let lambda1 = &report.blocks[0];
        assert_eq!(lambda1.name, "lambda[mode 1]");
        assert_relative_eq!(lambda1.rmse, c * 2.0f64.sqrt(), max_relative = 1e-6);
        assert_relative_eq!(lambda1.node_rmse, c, max_relative = 1e-6);
        assert!(lambda1.rmse_oracle.is_none());
        assert_eq!(lambda1.coverage, 0.0);
        let alpha = report.blocks.last().unwrap();
        assert!(alpha.rmse < 1e-6);
        assert!(report.selection_frequency.iter().all(|f| f.is_empty()));
    }

    #[test]
    fn selection_frequencies_average_over_replicates() {
        let (mut outcomes, truth) = exact_outcomes(&[7, 8]);
        outcomes[0].selected = Some(vec![2, 2]);
        outcomes[1].selected = Some(vec![2, 3]);
        let report = simulation_metrics(&outcomes, &truth).unwrap();
        assert_eq!(report.selection_frequency[0][&2], 1.0);
        assert_eq!(report.selection_frequency[1][&2], 0.5);
        assert_eq!(report.selection_frequency[1][&3], 0.5);
        let total: f64 = report.selection_frequency[1].values().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coverage_reflects_a_known_interval_failure() {
        // Make the intervals empty by zeroing the variance: every interval
        // collapses to the point estimate, which differs from the truth on
        // noisy data.
        let d = make_dataset([8, 6], 10, 0.8, 207);
        let fitted =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        let zeroed = coefficient_inference(&fitted, 0.0).unwrap();
        for c in &zeroed.coefficients {
            assert_eq!(c.ci_lower, c.ci_upper);
        }
        let honest =
            coefficient_inference(&fitted, residual_variance(&fitted).unwrap()).unwrap();
        let wider = honest
            .coefficients
            .iter()
            .zip(&zeroed.coefficients)
            .all(|(a, b)| (a.ci_upper - a.ci_lower) >= (b.ci_upper - b.ci_lower));
        assert!(wider);
    }

    #[test]
    fn hungarian_solves_a_known_cost_matrix() {
        // Optimal assignment: row 0 -> col 1, row 1 -> col 0, row 2 -> col 2
        // with total cost 1 + 2 + 3 = 6.
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let mut best = f64::INFINITY;
        for p in permutations(3) {
            best = best.min((0..3).map(|i| cost[i][p[i]]).sum());
        }
        assert_eq!(total, best);
        let mut seen = a.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn normal_reference_p_value_is_exact_for_a_known_z() {
        let d = make_dataset([6, 5], 8, 0.5, 301);
        let fitted =
            fit(&d.series, &d.networks, &d.covariates, &[2, 2], &FitOptions::default()).unwrap();
        let inference =
            coefficient_inference(&fitted, residual_variance(&fitted).unwrap()).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for c in &inference.coefficients {
            if c.std_error > 0.0 {
                let z = (c.estimate / c.std_error).abs();
                assert_relative_eq!(
                    c.p_value,
                    2.0 * (1.0 - normal.cdf(z)),
                    epsilon = 1e-15
                );
            }
        }
    }
}
