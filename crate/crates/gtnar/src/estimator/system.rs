//! Stacked coefficient layout, normal system assembly, and objectives.
//!
//! The unknowns of the least-squares step are stacked into one vector `xi`:
//! mode by mode the per-group `(lambda, zeta)` blocks, followed by the
//! vectorized group-tuple autoregressive coefficients (first tuple component
//! fastest). The normal system `M xi = b` is the exact Gram system of the
//! dummy-expanded regression of every cell-time observation on its feature
//! vector, so `grad Q = 2 (M xi - b)` and assembly only needs the per-cell
//! statistics grouped by the current membership tuples.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::cells::{dot, quad_form, CellStats};
use crate::estimator::ldlt::{Degenerate, LdltFactor};
use crate::model::{CovariatePanel, FeatureLayout, GroupedParameters, TensorSeries};
use crate::netgen::{GroupAssignment, NetworkLayer};
use crate::tensor::{advance, DenseTensor, IndexSubset};

/// Coordinate layout of the stacked coefficient vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XiLayout {
    g: Vec<usize>,
    p: Vec<usize>,
}

impl XiLayout {
    pub fn new(group_counts: Vec<usize>, covariate_counts: Vec<usize>) -> Result<Self> {
        if group_counts.is_empty() || group_counts.len() != covariate_counts.len() {
            return Err(Error::Shape(format!(
                "{} group counts for {} covariate counts",
                group_counts.len(),
                covariate_counts.len()
            )));
        }
        if group_counts.iter().any(|&g| g == 0) {
            return Err(Error::Validation("every mode needs at least one group".into()));
        }
        Ok(Self { g: group_counts, p: covariate_counts })
    }

    pub fn mode_count(&self) -> usize {
        self.g.len()
    }

    pub fn group_counts(&self) -> &[usize] {
        &self.g
    }

    pub fn covariate_counts(&self) -> &[usize] {
        &self.p
    }

    /// Coefficients per group of one mode: lambda plus the covariate effects.
    pub fn theta_len(&self, mode: usize) -> usize {
        self.p[mode] + 1
    }

    /// First coordinate of a mode's block.
    pub fn mode_offset(&self, mode: usize) -> usize {
        (0..mode).map(|l| self.g[l] * self.theta_len(l)).sum()
    }

    /// First coordinate of one group's `(lambda, zeta)` block.
    pub fn theta_offset(&self, mode: usize, group: usize) -> usize {
        self.mode_offset(mode) + group * self.theta_len(mode)
    }

    /// First coordinate of the vectorized alpha block.
    pub fn alpha_offset(&self) -> usize {
        self.mode_offset(self.g.len())
    }

    /// Number of group tuples.
    pub fn alpha_count(&self) -> usize {
        self.g.iter().product()
    }

    /// Strides of the tuple linearization (first component fastest).
    pub fn alpha_strides(&self) -> Vec<usize> {
        crate::tensor::strides(&self.g)
    }

    /// Coordinate of one tuple's alpha coefficient.
    pub fn alpha_pos(&self, tuple: &[usize]) -> usize {
        let strides = self.alpha_strides();
        self.alpha_offset() + tuple.iter().zip(&strides).map(|(&t, &s)| t * s).sum::<usize>()
    }

    /// Total coordinate count.
    pub fn k(&self) -> usize {
        self.alpha_offset() + self.alpha_count()
    }

    pub fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.p.clone())
    }

    /// Human-readable name of one coordinate (1-based modes and groups).
    pub fn describe(&self, coord: usize) -> String {
        let alpha_off = self.alpha_offset();
        if coord >= alpha_off {
            let mut rest = coord - alpha_off;
            let mut tuple = Vec::with_capacity(self.g.len());
            for &gl in &self.g {
                tuple.push(rest % gl + 1);
                rest /= gl;
            }
            return format!("alpha{:?}", tuple);
        }
        let mut offset = coord;
        for l in 0..self.g.len() {
            let block = self.g[l] * self.theta_len(l);
            if offset < block {
                let group = offset / self.theta_len(l);
                let j = offset % self.theta_len(l);
                return if j == 0 {
                    format!("lambda[mode {}, group {}]", l + 1, group + 1)
                } else {
                    format!("zeta[mode {}, group {}, covariate {}]", l + 1, group + 1, j)
                };
            }
            offset -= block;
        }
        unreachable!("coordinate {} beyond layout of size {}", coord, self.k())
    }

    /// Reassembles grouped parameters from a stacked coefficient vector.
    pub fn params_from_xi(&self, xi: &[f64], noise_sd: f64) -> Result<GroupedParameters> {
        if xi.len() != self.k() {
            return Err(Error::Shape(format!(
                "coefficient vector of length {} for layout of size {}",
                xi.len(),
                self.k()
            )));
        }
        let q = self.g.len();
        let mut lambda = Vec::with_capacity(q);
        let mut zeta = Vec::with_capacity(q);
        for l in 0..q {
            let mut lam = Vec::with_capacity(self.g[l]);
            let mut z = DMatrix::zeros(self.g[l], self.p[l]);
            for g in 0..self.g[l] {
                let base = self.theta_offset(l, g);
                lam.push(xi[base]);
                for k in 0..self.p[l] {
                    z[(g, k)] = xi[base + 1 + k];
                }
            }
            lambda.push(lam);
            zeta.push(z);
        }
        let alpha =
            DenseTensor::new(self.g.clone(), xi[self.alpha_offset()..].to_vec())?;
        GroupedParameters::new(lambda, zeta, alpha, noise_sd)
    }

    /// Stacks grouped parameters into coefficient-vector order.
    pub fn xi_from_params(&self, params: &GroupedParameters) -> Result<Vec<f64>> {
        if params.group_counts() != self.g || params.covariate_counts() != self.p {
            return Err(Error::Shape("parameters do not match the layout".into()));
        }
        let mut xi = vec![0.0; self.k()];
        for l in 0..self.g.len() {
            for g in 0..self.g[l] {
                let base = self.theta_offset(l, g);
                let theta = params.theta(l, g);
                xi[base..base + theta.len()].copy_from_slice(&theta);
            }
        }
        xi[self.alpha_offset()..].copy_from_slice(params.alpha().vectorize());
        Ok(xi)
    }
}

/// Normal system `M xi = b` of the least-squares step at fixed memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub m: DMatrix<f64>,
    pub b: Vec<f64>,
    pub layout: XiLayout,
}

/// Per-tuple sums of the cell statistics under a membership state.
pub(crate) struct TupleStats {
    pub gram: Vec<f64>,
    pub xy: Vec<f64>,
    pub count: Vec<usize>,
    gram_len: usize,
    m: usize,
}

/// Tuple linearization of every cell under the current labels.
pub(crate) fn cell_tuples(cells: &CellStats, labels: &[Vec<usize>], layout: &XiLayout) -> Vec<usize> {
    let strides = layout.alpha_strides();
    let q = cells.dims.len();
    let mut out = Vec::with_capacity(cells.n_cells);
    let mut idx = vec![0usize; q];
    for _ in 0..cells.n_cells {
        let mut lin = 0;
        for l in 0..q {
            lin += labels[l][idx[l]] * strides[l];
        }
        out.push(lin);
        advance(&mut idx, &cells.dims);
    }
    out
}

pub(crate) fn tuple_stats(cells: &CellStats, labels: &[Vec<usize>], layout: &XiLayout) -> TupleStats {
    let n_tuples = layout.alpha_count();
    let (gram_len, m) = (cells.gram_len, cells.m);
    let mut gram = vec![0.0; n_tuples * gram_len];
    let mut xy = vec![0.0; n_tuples * m];
    let mut count = vec![0usize; n_tuples];
    for (c, &tup) in cell_tuples(cells, labels, layout).iter().enumerate() {
        count[tup] += 1;
        let dst = &mut gram[tup * gram_len..(tup + 1) * gram_len];
        for (d, &s) in dst.iter_mut().zip(cells.gram_of(c)) {
            *d += s;
        }
        let dst = &mut xy[tup * m..(tup + 1) * m];
        for (d, &s) in dst.iter_mut().zip(cells.xy_of(c)) {
            *d += s;
        }
    }
    TupleStats { gram, xy, count, gram_len, m }
}

/// Scatters the tuple sums into the dense normal system.
pub(crate) fn assemble_from_tuples(
    layout: &XiLayout,
    cells: &CellStats,
    tuples: &TupleStats,
) -> NormalSystem {
    let k = layout.k();
    let q = layout.mode_count();
    let feature = cells.layout.clone();
    let m = cells.m;
    let mut mat = DMatrix::zeros(k, k);
    let mut b = vec![0.0; k];

    let mut tuple = vec![0usize; q];
    let mut pos = vec![0usize; m];
    for lin in 0..layout.alpha_count() {
        if tuples.count[lin] > 0 {
            // Feature slot -> coefficient coordinate under this tuple.
            for l in 0..q {
                let base = layout.theta_offset(l, tuple[l]);
                let off = feature.mode_offset(l);
                for j in 0..layout.theta_len(l) {
                    pos[off + j] = base + j;
                }
            }
            pos[m - 1] = layout.alpha_offset() + lin;

            let g = &tuples.gram[lin * tuples.gram_len..(lin + 1) * tuples.gram_len];
            let s = &tuples.xy[lin * tuples.m..(lin + 1) * tuples.m];
            let mut gi = 0;
            for i in 0..m {
                for j in 0..=i {
                    let v = g[gi];
                    gi += 1;
                    mat[(pos[i], pos[j])] += v;
                    if i != j {
                        mat[(pos[j], pos[i])] += v;
                    }
                }
                b[pos[i]] += s[i];
            }
        }
        advance(&mut tuple, layout.group_counts());
    }
    NormalSystem { m: mat, b, layout: layout.clone() }
}

/// First empty group (mode, group) under the given labels, if any.
pub(crate) fn first_empty_group(labels: &[Vec<usize>], layout: &XiLayout) -> Option<(usize, usize)> {
    for (l, &gl) in layout.group_counts().iter().enumerate() {
        let mut seen = vec![false; gl];
        for &g in &labels[l] {
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|&s| !s) {
            return Some((l, g));
        }
    }
    None
}

/// Coordinates backed by at least one observation: a `(lambda, zeta)` block
/// is active when its group has members, an alpha coordinate when its whole
/// tuple does.
pub(crate) fn active_coordinates(labels: &[Vec<usize>], layout: &XiLayout) -> Vec<bool> {
    let q = layout.mode_count();
    let counts: Vec<Vec<usize>> = (0..q)
        .map(|l| {
            let mut c = vec![0usize; layout.group_counts()[l]];
            for &g in &labels[l] {
                c[g] += 1;
            }
            c
        })
        .collect();
    let mut active = vec![false; layout.k()];
    for l in 0..q {
        for g in 0..layout.group_counts()[l] {
            if counts[l][g] > 0 {
                let base = layout.theta_offset(l, g);
                for j in 0..layout.theta_len(l) {
                    active[base + j] = true;
                }
            }
        }
    }
    let mut tuple = vec![0usize; q];
    for lin in 0..layout.alpha_count() {
        if (0..q).all(|l| counts[l][tuple[l]] > 0) {
            active[layout.alpha_offset() + lin] = true;
        }
        advance(&mut tuple, layout.group_counts());
    }
    active
}

fn singular_error(layout: &XiLayout, map: Option<&[usize]>, d: Degenerate) -> Error {
    let coord = map.map_or(d.index, |m| m[d.index]);
    Error::Singular {
        detail: format!("no information for {}", layout.describe(coord)),
        rcond: d.rcond,
    }
}

/// Inverse of the system matrix, for plug-in covariance estimates.
pub(crate) fn m_inverse(system: &NormalSystem) -> Result<DMatrix<f64>> {
    let factor =
        LdltFactor::new(&system.m).map_err(|d| singular_error(&system.layout, None, d))?;
    Ok(factor.inverse())
}

/// Solves the normal system for the stacked coefficients.
pub fn solve_params(system: &NormalSystem) -> Result<Vec<f64>> {
    let factor =
        LdltFactor::new(&system.m).map_err(|d| singular_error(&system.layout, None, d))?;
    Ok(factor.solve(&system.b))
}

/// Solves the system restricted to active coordinates, copying frozen values
/// from `previous` for the rest. Used when a group loses all members during
/// the alternating iteration: its block keeps the last estimate and stays
/// available for reassignment.
pub(crate) fn solve_with_freeze(
    system: &NormalSystem,
    active: &[bool],
    previous: &[f64],
) -> Result<Vec<f64>> {
    let keep: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    if keep.len() == active.len() {
        return solve_params(system);
    }
    let r = keep.len();
    let mut m = DMatrix::zeros(r, r);
    let mut b = vec![0.0; r];
    for (i, &ci) in keep.iter().enumerate() {
        for (j, &cj) in keep.iter().enumerate() {
            m[(i, j)] = system.m[(ci, cj)];
        }
        b[i] = system.b[ci];
    }
    let factor = LdltFactor::new(&m).map_err(|d| singular_error(&system.layout, Some(&keep), d))?;
    let solved = factor.solve(&b);
    let mut xi = previous.to_vec();
    for (i, &ci) in keep.iter().enumerate() {
        xi[ci] = solved[i];
    }
    Ok(xi)
}

/// Builds each cell's stacked coefficients and evaluates the objective from
/// the cached statistics. Fast but subject to cancellation when residuals
/// are near zero; clamped at zero.
pub(crate) fn objective_from_cells(
    cells: &CellStats,
    labels: &[Vec<usize>],
    layout: &XiLayout,
    xi: &[f64],
) -> f64 {
    let q = cells.dims.len();
    let feature = &cells.layout;
    let m = cells.m;
    let strides = layout.alpha_strides();
    let mut theta = vec![0.0; m];
    let mut idx = vec![0usize; q];
    let mut total = 0.0;
    for c in 0..cells.n_cells {
        let mut lin = 0;
        for l in 0..q {
            let g = labels[l][idx[l]];
            lin += g * strides[l];
            let src = layout.theta_offset(l, g);
            let dst = feature.mode_offset(l);
            let len = layout.theta_len(l);
            theta[dst..dst + len].copy_from_slice(&xi[src..src + len]);
        }
        theta[m - 1] = xi[layout.alpha_offset() + lin];
        total += cells.yy[c] - 2.0 * dot(&theta, cells.xy_of(c)) + quad_form(cells.gram_of(c), &theta);
        advance(&mut idx, &cells.dims);
    }
    total.max(0.0)
}

/// Exact objective by direct residual summation over every cell and time.
pub(crate) fn objective_direct(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    labels: &[Vec<usize>],
    layout: &XiLayout,
    xi: &[f64],
) -> Result<f64> {
    let dims = series.dims().to_vec();
    let q = dims.len();
    let n_cells: usize = dims.iter().product();
    let strides = layout.alpha_strides();
    let mut total = 0.0;
    for t in 1..=series.t_max() {
        let prev = series.tensor(t - 1);
        let nets: Vec<DenseTensor> = (0..q)
            .map(|l| prev.mode_multiply(networks[l].weights(), l))
            .collect::<Result<_>>()?;
        let prev_data = prev.vectorize();
        let cur_data = series.tensor(t).vectorize();
        let mut idx = vec![0usize; q];
        for c in 0..n_cells {
            let mut mean = 0.0;
            let mut lin = 0;
            for l in 0..q {
                let g = labels[l][idx[l]];
                lin += g * strides[l];
                let base = layout.theta_offset(l, g);
                mean += xi[base] * nets[l].vectorize()[c];
                let x = covariates.mode(l).row(idx[l], t - 1);
                for (k, &xv) in x.iter().enumerate() {
                    mean += xi[base + 1 + k] * xv;
                }
            }
            mean += xi[layout.alpha_offset() + lin] * prev_data[c];
            let r = cur_data[c] - mean;
            total += r * r;
            advance(&mut idx, &dims);
        }
    }
    Ok(total)
}

/// Design block of one group tuple, mode, and time: one row per tuple cell
/// (in the vectorization order of the sliced response), the mode's network
/// regressor in the first column and that mode's covariates after it.
pub fn build_design_block(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    memberships: &[GroupAssignment],
    tuple: &[usize],
    mode: usize,
    t: usize,
) -> Result<DMatrix<f64>> {
    let dims = series.dims().to_vec();
    let q = dims.len();
    if memberships.len() != q || tuple.len() != q {
        return Err(Error::Shape("tuple or memberships disagree with the series order".into()));
    }
    if mode >= q {
        return Err(Error::Shape(format!("mode {} out of range for order {}", mode, q)));
    }
    if t == 0 || t > series.t_max() {
        return Err(Error::Validation(format!("time {} out of range 1..={}", t, series.t_max())));
    }
    let sets: Vec<Vec<usize>> = (0..q)
        .map(|l| {
            if tuple[l] >= memberships[l].group_count() {
                return Err(Error::Validation(format!(
                    "group {} out of range in mode {}",
                    tuple[l], l
                )));
            }
            let set = memberships[l].group_sets()[tuple[l]].clone();
            if set.is_empty() {
                return Err(Error::EmptyGroup { mode: l, group: tuple[l] });
            }
            Ok(set)
        })
        .collect::<Result<_>>()?;
    let subset = IndexSubset::new(sets.clone())?;

    let prev = series.tensor(t - 1);
    let regressor = prev.mode_multiply(networks[mode].weights(), mode)?.subset(&subset)?;
    let rows = regressor.len();
    let p = covariates.mode(mode).covariate_count();
    let mut block = DMatrix::zeros(rows, p + 1);

    let sub_dims: Vec<usize> = sets.iter().map(Vec::len).collect();
    let mut idx = vec![0usize; q];
    for r in 0..rows {
        block[(r, 0)] = regressor.vectorize()[r];
        let node = sets[mode][idx[mode]];
        let x = covariates.mode(mode).row(node, t - 1);
        for (k, &xv) in x.iter().enumerate() {
            block[(r, k + 1)] = xv;
        }
        advance(&mut idx, &sub_dims);
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_offsets_follow_block_order() {
        let layout = XiLayout::new(vec![2, 3], vec![1, 2]).unwrap();
        // Mode 1: 2 groups x 2 coords, mode 2: 3 groups x 3 coords, alpha: 6.
        assert_eq!(layout.k(), 4 + 9 + 6);
        assert_eq!(layout.theta_offset(0, 1), 2);
        assert_eq!(layout.mode_offset(1), 4);
        assert_eq!(layout.theta_offset(1, 2), 4 + 6);
        assert_eq!(layout.alpha_offset(), 13);
        assert_eq!(layout.alpha_pos(&[1, 0]), 14);
        assert_eq!(layout.alpha_pos(&[0, 2]), 13 + 4);
        assert_eq!(layout.describe(0), "lambda[mode 1, group 1]");
        assert_eq!(layout.describe(3), "zeta[mode 1, group 2, covariate 1]");
        assert_eq!(layout.describe(14), "alpha[2, 1]");
    }

    #[test]
    fn params_round_trip_through_xi() {
        let layout = XiLayout::new(vec![2, 2], vec![1, 1]).unwrap();
        let xi: Vec<f64> = (0..layout.k()).map(|i| i as f64 * 0.1 - 0.4).collect();
        let params = layout.params_from_xi(&xi, 0.3).unwrap();
        assert_relative_eq!(params.lambda()[0][1], xi[2]);
        assert_relative_eq!(params.zeta()[1][(0, 0)], xi[5]);
        assert_relative_eq!(
            params.alpha().get(&[1, 0]).unwrap(),
            xi[layout.alpha_offset() + 1]
        );
        let back = layout.xi_from_params(&params).unwrap();
        assert_eq!(back, xi);
    }
}
