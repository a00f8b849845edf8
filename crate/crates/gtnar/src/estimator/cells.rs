//! Per-cell sufficient statistics.
//!
//! The least-squares objective decomposes over cells: with `v_[c,t]` the
//! feature vector of cell `c` at time `t` and `theta_c` the cell's stacked
//! group coefficients,
//!
//! ```text
//! Q = sum_c sum_t (y_[c,t] - theta_c . v_[c,t])^2
//!   = sum_c [ yy_c - 2 theta_c . s_c + theta_c' C_c theta_c ]
//! ```
//!
//! where `C_c = sum_t v v'`, `s_c = sum_t y v`, `yy_c = sum_t y^2` depend on
//! the data only. Caching them once per dataset makes every alternating
//! step (normal-system assembly, membership sweeps, objective traces) a
//! single pass over cells with no reference to the raw series, which is what
//! keeps grid searches over group counts affordable.

use crate::error::{Error, Result};
use crate::model::{CovariatePanel, FeatureLayout, TensorSeries};
use crate::netgen::NetworkLayer;
use crate::tensor::{advance, DenseTensor};

/// Node-by-time sums over each mode's slices, used by the initialization
/// heuristics: `y` aggregates the response, `reg` the mode's network
/// regressor, and `lag` the lagged response. Entry `(node, t)` sits at
/// `node * t_len + (t - 1)`.
pub(crate) struct ModeAggregates {
    pub y: Vec<f64>,
    pub reg: Vec<f64>,
    pub lag: Vec<f64>,
}

/// Time-summed per-cell statistics plus the per-mode aggregates.
pub(crate) struct CellStats {
    pub dims: Vec<usize>,
    pub layout: FeatureLayout,
    pub t_len: usize,
    pub n_cells: usize,
    /// Feature length `m`.
    pub m: usize,
    /// Packed length `m (m + 1) / 2` of one lower-triangular Gram block.
    pub gram_len: usize,
    /// `n_cells` packed Gram matrices `C_c`.
    pub gram: Vec<f64>,
    /// `n_cells` vectors `s_c`.
    pub xy: Vec<f64>,
    /// `n_cells` scalars `yy_c`.
    pub yy: Vec<f64>,
    pub agg: Vec<ModeAggregates>,
}

impl CellStats {
    pub(crate) fn build(
        series: &TensorSeries,
        networks: &[NetworkLayer],
        covariates: &CovariatePanel,
    ) -> Result<Self> {
        let dims = series.dims().to_vec();
        let q = dims.len();
        if networks.len() != q || covariates.mode_count() != q {
            return Err(Error::Shape(format!(
                "series of order {} with {} networks and {} covariate modes",
                q,
                networks.len(),
                covariates.mode_count()
            )));
        }
        for l in 0..q {
            if networks[l].n() != dims[l] || covariates.mode(l).n_nodes() != dims[l] {
                return Err(Error::Shape(format!(
                    "mode {}: series extent {}, network {}, covariates {}",
                    l,
                    dims[l],
                    networks[l].n(),
                    covariates.mode(l).n_nodes()
                )));
            }
        }
        let t_len = series.t_max();
        if covariates.t_len() != t_len {
            return Err(Error::Shape(format!(
                "covariate panel spans {} slots for a series with {} transitions",
                covariates.t_len(),
                t_len
            )));
        }
        if t_len < 2 {
            return Err(Error::Validation("estimation needs at least two transitions".into()));
        }
        covariates.check_identifiable()?;

        let layout = covariates.layout();
        let m = layout.m();
        let gram_len = m * (m + 1) / 2;
        let n_cells: usize = dims.iter().product();
        let p: Vec<usize> = covariates.covariate_counts();

        let mut gram = vec![0.0; n_cells * gram_len];
        let mut xy = vec![0.0; n_cells * m];
        let mut yy = vec![0.0; n_cells];
        let mut agg: Vec<ModeAggregates> = dims
            .iter()
            .map(|&n| ModeAggregates {
                y: vec![0.0; n * t_len],
                reg: vec![0.0; n * t_len],
                lag: vec![0.0; n * t_len],
            })
            .collect();

        let mut v = vec![0.0; m];
        for t in 1..=t_len {
            let prev = series.tensor(t - 1);
            let cur = series.tensor(t);
            let nets: Vec<DenseTensor> = (0..q)
                .map(|l| prev.mode_multiply(networks[l].weights(), l))
                .collect::<Result<_>>()?;
            let net_data: Vec<&[f64]> = nets.iter().map(DenseTensor::vectorize).collect();
            let prev_data = prev.vectorize();
            let cur_data = cur.vectorize();

            let mut idx = vec![0usize; q];
            for c in 0..n_cells {
                let mut pos = 0;
                for l in 0..q {
                    v[pos] = net_data[l][c];
                    pos += 1;
                    v[pos..pos + p[l]].copy_from_slice(covariates.mode(l).row(idx[l], t - 1));
                    pos += p[l];
                }
                v[pos] = prev_data[c];
                let y = cur_data[c];

                let g = &mut gram[c * gram_len..(c + 1) * gram_len];
                let mut gi = 0;
                for i in 0..m {
                    let vi = v[i];
                    for &vj in &v[..=i] {
                        g[gi] += vi * vj;
                        gi += 1;
                    }
                }
                let s = &mut xy[c * m..(c + 1) * m];
                for (sj, &vj) in s.iter_mut().zip(&v) {
                    *sj += y * vj;
                }
                yy[c] += y * y;

                for l in 0..q {
                    let slot = idx[l] * t_len + (t - 1);
                    agg[l].y[slot] += y;
                    agg[l].reg[slot] += net_data[l][c];
                    agg[l].lag[slot] += prev_data[c];
                }
                advance(&mut idx, &dims);
            }
        }

        Ok(Self { dims, layout, t_len, n_cells, m, gram_len, gram, xy, yy, agg })
    }

    /// Packed Gram block of one cell.
    pub(crate) fn gram_of(&self, c: usize) -> &[f64] {
        &self.gram[c * self.gram_len..(c + 1) * self.gram_len]
    }

    /// Cross-product vector of one cell.
    pub(crate) fn xy_of(&self, c: usize) -> &[f64] {
        &self.xy[c * self.m..(c + 1) * self.m]
    }

}

/// Quadratic form `theta' C theta` with `C` packed lower-triangular.
#[inline]
pub(crate) fn quad_form(c: &[f64], theta: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut gi = 0;
    for (i, &ti) in theta.iter().enumerate() {
        let mut row = 0.0;
        for &tj in &theta[..i] {
            row += c[gi] * tj;
            gi += 1;
        }
        acc += ti * (2.0 * row + c[gi] * ti);
        gi += 1;
    }
    acc
}

/// Dot product of two equal-length slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
