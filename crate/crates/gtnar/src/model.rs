//! Model types, simulation, and per-observation features.
//!
//! The observation at time `t` is a tensor `Y_t` over the node sets of `q`
//! networks. Each cell `(i_1, ..., i_q)` evolves as
//!
//! ```text
//! Y_[i,t] = sum_l lambda[l][g_l] * (W_l Y_[t-1])_[i]     network momentum
//!         + alpha[g_1, ..., g_q] * Y_[i,t-1]             cell autoregression
//!         + sum_l x[l][i_l,t] . zeta[l][g_l]             covariate effects
//!         + eps_[i,t]                                    i.i.d. N(0, sd^2)
//! ```
//!
//! where `g_l` is the latent group of node `i_l` in mode `l` and `W_l` is the
//! row-normalized adjacency of network `l`. Collecting the regressors of one
//! cell-time into a feature vector (mode by mode: network regressor then
//! covariates, with the lagged response last) makes the mean the inner
//! product of that feature with the cell's stacked group parameters; the
//! estimator and the inference layer both rely on this layout.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::netgen::{GroupAssignment, NetworkLayer};
use crate::rng::derive_rng;
use crate::tensor::{advance, DenseTensor};

/// Positions inside the per-cell feature vector, determined by the number of
/// covariates per mode. Mode `l` contributes `p_l + 1` slots (network
/// regressor, then covariates); the lagged response sits last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    p: Vec<usize>,
}

impl FeatureLayout {
    pub fn new(covariate_counts: Vec<usize>) -> Self {
        Self { p: covariate_counts }
    }

    pub fn mode_count(&self) -> usize {
        self.p.len()
    }

    pub fn covariate_counts(&self) -> &[usize] {
        &self.p
    }

    /// Total feature length `sum_l (p_l + 1) + 1`.
    pub fn m(&self) -> usize {
        self.p.iter().map(|&p| p + 1).sum::<usize>() + 1
    }

    /// First slot of mode `l`'s block.
    pub fn mode_offset(&self, mode: usize) -> usize {
        self.p[..mode].iter().map(|&p| p + 1).sum()
    }

    /// Slot of mode `l`'s network regressor.
    pub fn reg_pos(&self, mode: usize) -> usize {
        self.mode_offset(mode)
    }

    /// Slot of covariate `k` of mode `l`.
    pub fn cov_pos(&self, mode: usize, k: usize) -> usize {
        self.mode_offset(mode) + 1 + k
    }

    /// Slot of the lagged response.
    pub fn lag_pos(&self) -> usize {
        self.m() - 1
    }
}

/// Group-level model parameters.
///
/// `lambda[l][g]` is the network effect of group `g` in mode `l`,
/// `zeta[l]` stacks the covariate effects (one row per group), and
/// `alpha` holds the autoregressive effect per group tuple with mode order
/// matching the tensor modes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedParameters {
    lambda: Vec<Vec<f64>>,
    zeta: Vec<DMatrix<f64>>,
    alpha: DenseTensor,
    noise_sd: f64,
}

impl GroupedParameters {
    pub fn new(
        lambda: Vec<Vec<f64>>,
        zeta: Vec<DMatrix<f64>>,
        alpha: DenseTensor,
        noise_sd: f64,
    ) -> Result<Self> {
        let q = lambda.len();
        if q == 0 {
            return Err(Error::Validation("parameters need at least one mode".into()));
        }
        if zeta.len() != q || alpha.order() != q {
            return Err(Error::Shape(format!(
                "inconsistent mode counts: {} lambda, {} zeta, alpha order {}",
                q,
                zeta.len(),
                alpha.order()
            )));
        }
        for l in 0..q {
            let g = lambda[l].len();
            if g == 0 {
                return Err(Error::Validation(format!("mode {} has no groups", l)));
            }
            if zeta[l].nrows() != g || alpha.dims()[l] != g {
                return Err(Error::Shape(format!(
                    "mode {}: {} lambda groups, {} zeta rows, alpha extent {}",
                    l,
                    g,
                    zeta[l].nrows(),
                    alpha.dims()[l]
                )));
            }
            if !lambda[l].iter().all(|v| v.is_finite()) || !zeta[l].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("mode {} has non-finite parameters", l)));
            }
        }
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(Error::Validation(format!("noise sd {} must be non-negative", noise_sd)));
        }
        Ok(Self { lambda, zeta, alpha, noise_sd })
    }

    pub fn mode_count(&self) -> usize {
        self.lambda.len()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        self.lambda.iter().map(Vec::len).collect()
    }

    pub fn covariate_counts(&self) -> Vec<usize> {
        self.zeta.iter().map(DMatrix::ncols).collect()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.covariate_counts())
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn zeta(&self) -> &[DMatrix<f64>] {
        &self.zeta
    }

    pub fn alpha(&self) -> &DenseTensor {
        &self.alpha
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Stacked `(lambda, zeta)` coefficients of one group.
    pub fn theta(&self, mode: usize, group: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.zeta[mode].ncols());
        v.push(self.lambda[mode][group]);
        v.extend(self.zeta[mode].row(group).iter());
        v
    }
}

/// Largest absolute group-tuple autoregressive weight, used to decide
/// whether simulated series stay stationary.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    pub max_abs: f64,
    pub worst_tuple: Vec<usize>,
}

/// Evaluates `|sum_l lambda[l][g_l] + alpha[g]|` over every group tuple `g`;
/// the model is stable when the maximum is below 1.
pub fn stability_check(params: &GroupedParameters) -> StabilityReport {
    let g = params.group_counts();
    let mut tuple = vec![0usize; g.len()];
    let total: usize = g.iter().product();
    let mut max_abs = f64::NEG_INFINITY;
    let mut worst = tuple.clone();
    for _ in 0..total {
        let mut sum = params.alpha.get(&tuple).expect("tuple in range");
        for (l, &gl) in tuple.iter().enumerate() {
            sum += params.lambda[l][gl];
        }
        if sum.abs() > max_abs {
            max_abs = sum.abs();
            worst = tuple.clone();
        }
        advance(&mut tuple, &g);
    }
    StabilityReport { stable: max_abs < 1.0, max_abs, worst_tuple: worst }
}

/// Covariates of one mode: `p` values per node and time step. Time slot
/// `t - 1` holds the covariates entering the transition that produces `Y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCovariates {
    n: usize,
    p: usize,
    t_len: usize,
    data: Vec<f64>,
}

impl ModeCovariates {
    pub fn new(n: usize, p: usize, t_len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p * t_len {
            return Err(Error::Shape(format!(
                "covariates for {} nodes, {} columns, {} times need {} values, got {}",
                n,
                p,
                t_len,
                n * p * t_len,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("covariates must be finite".into()));
        }
        Ok(Self { n, p, t_len, data })
    }

    /// Mode with no covariates.
    pub fn empty(n: usize, t_len: usize) -> Self {
        Self { n, p: 0, t_len, data: Vec::new() }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn covariate_count(&self) -> usize {
        self.p
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Covariate row of one node at time slot `t_slot` in `0..t_len`.
    pub fn row(&self, node: usize, t_slot: usize) -> &[f64] {
        let base = (t_slot * self.n + node) * self.p;
        &self.data[base..base + self.p]
    }

    /// The last `keep` time slots, e.g. to drop a burn-in prefix.
    pub fn tail(&self, keep: usize) -> Result<Self> {
        if keep > self.t_len {
            return Err(Error::Shape(format!("cannot keep {} of {} time slots", keep, self.t_len)));
        }
        let start = (self.t_len - keep) * self.n * self.p;
        Self::new(self.n, self.p, keep, self.data[start..].to_vec())
    }

    /// Indices of covariate columns that are constant over nodes and times.
    fn constant_columns(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&k| {
                let first = self.data[k];
                (0..self.t_len * self.n).all(|row| self.data[row * self.p + k] == first)
            })
            .collect()
    }
}

/// One covariate set per mode, sharing a common time span.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePanel {
    modes: Vec<ModeCovariates>,
}

impl CovariatePanel {
    pub fn new(modes: Vec<ModeCovariates>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Validation("covariate panel needs at least one mode".into()));
        }
        let t_len = modes[0].t_len;
        if modes.iter().any(|m| m.t_len != t_len) {
            return Err(Error::Shape("covariate modes disagree on the time span".into()));
        }
        Ok(Self { modes })
    }

    /// Panel with no covariates in any mode.
    pub fn none(dims: &[usize], t_len: usize) -> Result<Self> {
        Self::new(dims.iter().map(|&n| ModeCovariates::empty(n, t_len)).collect())
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, l: usize) -> &ModeCovariates {
        &self.modes[l]
    }

    pub fn t_len(&self) -> usize {
        self.modes[0].t_len
    }

    pub fn covariate_counts(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.p).collect()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.covariate_counts())
    }

    /// The last `keep` time slots of every mode.
    pub fn tail(&self, keep: usize) -> Result<Self> {
        Self::new(self.modes.iter().map(|m| m.tail(keep)).collect::<Result<_>>()?)
    }

    /// Rejects panels where two or more modes carry a constant column: a
    /// constant column acts as an intercept, and intercepts in several modes
    /// make the group-level coefficients non-identifiable.
    pub fn check_identifiable(&self) -> Result<()> {
        let with_constant: Vec<usize> = self
            .modes
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.constant_columns().is_empty())
            .map(|(l, _)| l)
            .collect();
        if with_constant.len() > 1 {
            return Err(Error::Validation(format!(
                "constant covariate columns in modes {:?}; an intercept is allowed in at most one mode",
                with_constant
            )));
        }
        Ok(())
    }
}

/// Draws i.i.d. standard normal covariates for every mode.
pub fn gen_covariates(dims: &[usize], p: &[usize], t_len: usize, seed: u64) -> Result<CovariatePanel> {
    if dims.len() != p.len() {
        return Err(Error::Shape(format!(
            "{} mode sizes but {} covariate counts",
            dims.len(),
            p.len()
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let modes = dims
        .iter()
        .zip(p)
        .enumerate()
        .map(|(l, (&n, &p_l))| {
            let mut rng = derive_rng(seed, l as u64);
            let data = (0..n * p_l * t_len).map(|_| normal.sample(&mut rng)).collect();
            ModeCovariates::new(n, p_l, t_len, data)
        })
        .collect::<Result<_>>()?;
    CovariatePanel::new(modes)
}

/// Observed tensor series `Y_0, ..., Y_T`, all slices sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSeries {
    tensors: Vec<DenseTensor>,
}

impl TensorSeries {
    pub fn new(tensors: Vec<DenseTensor>) -> Result<Self> {
        if tensors.len() < 2 {
            return Err(Error::Validation("series needs at least two time points".into()));
        }
        let dims = tensors[0].dims().to_vec();
        if tensors.iter().any(|t| t.dims() != dims) {
            return Err(Error::Shape("series slices disagree on dimensions".into()));
        }
        Ok(Self { tensors })
    }

    pub fn dims(&self) -> &[usize] {
        self.tensors[0].dims()
    }

    /// Number of transitions `T`; the series holds `T + 1` tensors.
    pub fn t_max(&self) -> usize {
        self.tensors.len() - 1
    }

    pub fn tensor(&self, t: usize) -> &DenseTensor {
        &self.tensors[t]
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }
}

fn check_dataset_shapes(
    networks: &[NetworkLayer],
    memberships: &[GroupAssignment],
    covariates: &CovariatePanel,
) -> Result<Vec<usize>> {
    let q = networks.len();
    if q == 0 {
        return Err(Error::Validation("need at least one network mode".into()));
    }
    if memberships.len() != q || covariates.mode_count() != q {
        return Err(Error::Shape(format!(
            "inconsistent mode counts: {} networks, {} membership modes, {} covariate modes",
            q,
            memberships.len(),
            covariates.mode_count()
        )));
    }
    let mut dims = Vec::with_capacity(q);
    for l in 0..q {
        let n = networks[l].n();
        if memberships[l].n_nodes() != n || covariates.mode(l).n_nodes() != n {
            return Err(Error::Shape(format!(
                "mode {}: network has {} nodes, memberships {}, covariates {}",
                l,
                n,
                memberships[l].n_nodes(),
                covariates.mode(l).n_nodes()
            )));
        }
        dims.push(n);
    }
    Ok(dims)
}

/// Per-cell autoregressive coefficients `alpha[g_(i_1), ..., g_(i_q)]`
/// flattened to the cell order.
fn alpha_per_cell(params: &GroupedParameters, memberships: &[GroupAssignment], dims: &[usize]) -> Vec<f64> {
    let n_cells: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    let mut tuple = vec![0usize; dims.len()];
    let mut out = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        for (l, &i) in idx.iter().enumerate() {
            tuple[l] = memberships[l].label(i);
        }
        out.push(params.alpha.get(&tuple).expect("tuple in range"));
        advance(&mut idx, dims);
    }
    out
}

/// Simulates the model from `Y_0 = 0`, returning the series together with the
/// noise tensors that were added at each step (one per transition).
///
/// The covariate panel must span `burn_in + t_len` time slots; the first
/// `burn_in` transitions are discarded and the remaining series is re-indexed
/// from 0. Fails when the parameters are unstable or shapes disagree.
pub fn simulate_with_noise(
    params: &GroupedParameters,
    networks: &[NetworkLayer],
    memberships: &[GroupAssignment],
    covariates: &CovariatePanel,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(TensorSeries, Vec<DenseTensor>)> {
    let dims = check_dataset_shapes(networks, memberships, covariates)?;
    let q = dims.len();
    let counts = params.group_counts();
    for l in 0..q {
        if memberships[l].group_count() != counts[l] {
            return Err(Error::Shape(format!(
                "mode {}: parameters have {} groups, memberships {}",
                l,
                counts[l],
                memberships[l].group_count()
            )));
        }
        if covariates.mode(l).covariate_count() != params.zeta()[l].ncols() {
            return Err(Error::Shape(format!(
                "mode {}: parameters expect {} covariates, panel has {}",
                l,
                params.zeta()[l].ncols(),
                covariates.mode(l).covariate_count()
            )));
        }
    }
    if t_len == 0 {
        return Err(Error::Validation("need at least one transition".into()));
    }
    if covariates.t_len() != burn_in + t_len {
        return Err(Error::Shape(format!(
            "covariate panel spans {} time slots, need burn_in + t_len = {}",
            covariates.t_len(),
            burn_in + t_len
        )));
    }
    let report = stability_check(params);
    if !report.stable {
        return Err(Error::Unstable { max_abs: report.max_abs, worst_tuple: report.worst_tuple });
    }

    let n_cells: usize = dims.iter().product();
    let alpha_cell = alpha_per_cell(params, memberships, &dims);
    // Node-level lambda lookup per mode.
    let lam: Vec<Vec<f64>> = (0..q)
        .map(|l| memberships[l].labels().iter().map(|&g| params.lambda[l][g]).collect())
        .collect();

    let mut rng = derive_rng(seed, 0);
    let normal = if params.noise_sd > 0.0 {
        Some(Normal::new(0.0, params.noise_sd).expect("valid sd"))
    } else {
        None
    };

    let mut tensors = vec![DenseTensor::zeros(dims.clone())?];
    let mut noises = Vec::with_capacity(burn_in + t_len);
    for t in 1..=burn_in + t_len {
        let prev = tensors.last().expect("nonempty");
        let nets: Vec<DenseTensor> =
            (0..q).map(|l| prev.mode_multiply(networks[l].weights(), l)).collect::<Result<_>>()?;
        // Covariate effect per mode and node at this time step.
        let covterm: Vec<Vec<f64>> = (0..q)
            .map(|l| {
                let mc = covariates.mode(l);
                (0..dims[l])
                    .map(|i| {
                        let g = memberships[l].label(i);
                        mc.row(i, t - 1)
                            .iter()
                            .enumerate()
                            .map(|(k, &x)| x * params.zeta[l][(g, k)])
                            .sum()
                    })
                    .collect()
            })
            .collect();

        let prev_data = prev.vectorize();
        let mut noise = vec![0.0; n_cells];
        if let Some(normal) = &normal {
            for e in noise.iter_mut() {
                *e = normal.sample(&mut rng);
            }
        }
        let mut data = vec![0.0; n_cells];
        let mut idx = vec![0usize; q];
        for c in 0..n_cells {
            let mut v = alpha_cell[c] * prev_data[c] + noise[c];
            for l in 0..q {
                v += lam[l][idx[l]] * nets[l].vectorize()[c] + covterm[l][idx[l]];
            }
            data[c] = v;
            advance(&mut idx, &dims);
        }
        tensors.push(DenseTensor::new(dims.clone(), data)?);
        noises.push(DenseTensor::new(dims.clone(), noise)?);
    }

    let series = TensorSeries::new(tensors.split_off(burn_in))?;
    let noises = noises.split_off(burn_in);
    Ok((series, noises))
}

/// Simulates the model from `Y_0 = 0`; see [`simulate_with_noise`].
pub fn simulate(
    params: &GroupedParameters,
    networks: &[NetworkLayer],
    memberships: &[GroupAssignment],
    covariates: &CovariatePanel,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<TensorSeries> {
    simulate_with_noise(params, networks, memberships, covariates, t_len, burn_in, seed)
        .map(|(series, _)| series)
}

/// Regressor vector of one cell-time observation: per mode the network
/// regressor `(W_l Y_[t-1])` at the cell followed by that mode's covariates,
/// with the lagged response `Y_[i,t-1]` in the final slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeature {
    pub values: Vec<f64>,
}

/// Computes the feature vector of cell `index` at time `t >= 1`.
pub fn node_feature(
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    index: &[usize],
    t: usize,
) -> Result<NodeFeature> {
    let dims = series.dims().to_vec();
    let q = dims.len();
    if networks.len() != q || covariates.mode_count() != q {
        return Err(Error::Shape("networks or covariates disagree with the series order".into()));
    }
    if covariates.t_len() != series.t_max() {
        return Err(Error::Shape(format!(
            "covariate panel spans {} slots for a series with {} transitions",
            covariates.t_len(),
            series.t_max()
        )));
    }
    if t == 0 || t > series.t_max() {
        return Err(Error::Validation(format!(
            "time {} out of range 1..={}",
            t,
            series.t_max()
        )));
    }
    let prev = series.tensor(t - 1);
    let _ = prev.linear_index(index)?;

    let layout = covariates.layout();
    let mut values = Vec::with_capacity(layout.m());
    for l in 0..q {
        if networks[l].n() != dims[l] {
            return Err(Error::Shape(format!("network {} does not match the series shape", l)));
        }
        // Network regressor: average of the followed nodes' lagged values.
        let w = networks[l].weights();
        let mut acc = 0.0;
        let mut src = index.to_vec();
        for k in 0..dims[l] {
            let weight = w[(index[l], k)];
            if weight != 0.0 {
                src[l] = k;
                acc += weight * prev.get(&src)?;
            }
        }
        values.push(acc);
        values.extend_from_slice(covariates.mode(l).row(index[l], t - 1));
    }
    values.push(prev.get(index)?);
    Ok(NodeFeature { values })
}

/// Expands group parameters to node level: the result has the cell modes
/// first and one trailing mode of length `m` holding each cell's stacked
/// coefficients `(lambda, zeta)` per mode followed by its alpha entry. The
/// model mean at a cell is the inner product of this row with the cell's
/// feature vector.
pub fn flatten_theta(
    params: &GroupedParameters,
    memberships: &[GroupAssignment],
) -> Result<DenseTensor> {
    let q = params.mode_count();
    if memberships.len() != q {
        return Err(Error::Shape(format!(
            "{} membership modes for {} parameter modes",
            memberships.len(),
            q
        )));
    }
    let counts = params.group_counts();
    for l in 0..q {
        if memberships[l].group_count() != counts[l] {
            return Err(Error::Shape(format!(
                "mode {}: parameters have {} groups, memberships {}",
                l,
                counts[l],
                memberships[l].group_count()
            )));
        }
    }
    let dims: Vec<usize> = memberships.iter().map(|g| g.n_nodes()).collect();
    let n_cells: usize = dims.iter().product();
    let layout = params.layout();
    let m = layout.m();
    let alpha_cell = alpha_per_cell(params, memberships, &dims);

    // Feature slot varies slowest: entry (cell, j) sits at cell + n_cells * j.
    let mut data = vec![0.0; n_cells * m];
    let mut idx = vec![0usize; q];
    for c in 0..n_cells {
        for l in 0..q {
            let g = memberships[l].label(idx[l]);
            let off = layout.mode_offset(l);
            data[c + n_cells * off] = params.lambda[l][g];
            for k in 0..params.zeta[l].ncols() {
                data[c + n_cells * (off + 1 + k)] = params.zeta[l][(g, k)];
            }
        }
        data[c + n_cells * layout.lag_pos()] = alpha_cell[c];
        advance(&mut idx, &dims);
    }
    let mut full_dims = dims;
    full_dims.push(m);
    DenseTensor::new(full_dims, data)
}
