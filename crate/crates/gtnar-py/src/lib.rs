//! Python bindings: thin wrappers around the core types plus the main
//! operations (generation, simulation, fitting, selection, inference).
//!
//! Result objects render themselves as JSON strings in the same layout the
//! command-line driver writes, so Python callers can reuse the shipped
//! schemas and tooling.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gtnar::estimator::{self, FitOptions};
use gtnar::inference::{
    chi_error_rate, coefficient_inference, misclustering_rate, residual_variance,
};
use gtnar::io::{fit_result_json, inference_json, selection_json};
use gtnar::model::{self, CovariatePanel, GroupedParameters, TensorSeries};
use gtnar::netgen::{self, GroupAssignment, NetworkLayer};
use gtnar::selection;
use gtnar::tensor::DenseTensor;

fn to_py_err(e: gtnar::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Group-level model parameters.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Parameters {
    inner: GroupedParameters,
}

#[pymethods]
impl Parameters {
    /// `lambda_[l][g]` per-mode momentum effects, `zeta[l][g]` covariate
    /// effect rows, `alpha_values` first-index-fastest over `alpha_dims`.
    #[new]
    #[pyo3(signature = (lambda_, zeta, alpha_dims, alpha_values, noise_sd))]
    fn new(
        lambda_: Vec<Vec<f64>>,
        zeta: Vec<Vec<Vec<f64>>>,
        alpha_dims: Vec<usize>,
        alpha_values: Vec<f64>,
        noise_sd: f64,
    ) -> PyResult<Self> {
        let zeta = zeta
            .into_iter()
            .map(|rows| {
                let g = rows.len();
                let p = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != p) {
                    return Err(PyValueError::new_err("ragged zeta rows"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Ok(nalgebra::DMatrix::from_row_slice(g, p, &flat))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let alpha = DenseTensor::new(alpha_dims, alpha_values).map_err(to_py_err)?;
        let inner = GroupedParameters::new(lambda_, zeta, alpha, noise_sd).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn lambda_(&self) -> Vec<Vec<f64>> {
        self.inner.lambda().to_vec()
    }

    #[getter]
    fn zeta(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .zeta()
            .iter()
            .map(|m| (0..m.nrows()).map(|g| m.row(g).iter().cloned().collect()).collect())
            .collect()
    }

    #[getter]
    fn alpha_dims(&self) -> Vec<usize> {
        self.inner.alpha().dims().to_vec()
    }

    #[getter]
    fn alpha_values(&self) -> Vec<f64> {
        self.inner.alpha().vectorize().to_vec()
    }

    #[getter]
    fn noise_sd(&self) -> f64 {
        self.inner.noise_sd()
    }

    #[getter]
    fn group_counts(&self) -> Vec<usize> {
        self.inner.group_counts()
    }

    #[getter]
    fn covariate_counts(&self) -> Vec<usize> {
        self.inner.covariate_counts()
    }

    /// True when every group-tuple autoregressive weight stays below 1.
    fn is_stable(&self) -> bool {
        model::stability_check(&self.inner).stable
    }

    /// Largest absolute group-tuple autoregressive weight.
    fn stability_bound(&self) -> f64 {
        model::stability_check(&self.inner).max_abs
    }
}

/// Node-to-group assignment for one mode, labels in `0..group_count`.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Memberships {
    inner: GroupAssignment,
}

#[pymethods]
impl Memberships {
    #[new]
    fn new(labels: Vec<usize>, group_count: usize) -> PyResult<Self> {
        Ok(Self { inner: GroupAssignment::new(labels, group_count).map_err(to_py_err)? })
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn group_count(&self) -> usize {
        self.inner.group_count()
    }

    fn __len__(&self) -> usize {
        self.inner.n_nodes()
    }
}

/// Row-normalized directed network over one mode.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Network {
    inner: NetworkLayer,
}

#[pymethods]
impl Network {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn isolated_nodes(&self) -> Vec<usize> {
        self.inner.isolated_nodes().to_vec()
    }

    /// Row-normalized weight of the edge `i -> j`.
    fn weight(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("edge ({}, {}) outside 0..{}", i, j, n)));
        }
        Ok(self.inner.weights()[(i, j)])
    }
}

/// Per-mode covariate panel.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Covariates {
    inner: CovariatePanel,
}

#[pymethods]
impl Covariates {
    #[getter]
    fn covariate_counts(&self) -> Vec<usize> {
        self.inner.covariate_counts()
    }

    #[getter]
    fn t_len(&self) -> usize {
        self.inner.t_len()
    }
}

/// Observed tensor series: `t_max + 1` slices, transitions from time 1.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Series {
    inner: TensorSeries,
}

#[pymethods]
impl Series {
    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn t_max(&self) -> usize {
        self.inner.t_max()
    }

    /// Vectorized slice at time `t`, first index fastest.
    fn values(&self, t: usize) -> PyResult<Vec<f64>> {
        if t > self.inner.t_max() {
            return Err(PyValueError::new_err(format!(
                "time {} outside 0..={}",
                t,
                self.inner.t_max()
            )));
        }
        Ok(self.inner.tensor(t).vectorize().to_vec())
    }
}

/// One estimation run.
#[pyclass(frozen)]
struct Fit {
    inner: estimator::FitResult,
}

#[pymethods]
impl Fit {
    #[getter]
    fn q_value(&self) -> f64 {
        self.inner.q_value
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.trace.len()
    }

    #[getter]
    fn init_kind(&self) -> String {
        self.inner.init_kind.clone()
    }

    #[getter]
    fn effective_groups(&self) -> Vec<usize> {
        self.inner.effective_groups.clone()
    }

    #[getter]
    fn memberships(&self) -> Vec<Memberships> {
        self.inner.memberships.iter().map(|m| Memberships { inner: m.clone() }).collect()
    }

    #[getter]
    fn parameters(&self) -> Parameters {
        Parameters { inner: self.inner.params.clone() }
    }

    /// Estimated noise standard deviation.
    #[getter]
    fn noise_sd(&self) -> f64 {
        self.inner.params.noise_sd()
    }

    /// The fit document as a JSON string, in the driver's layout.
    fn to_json(&self) -> String {
        fit_result_json(&self.inner).to_string()
    }

    /// Plug-in inference document as a JSON string.
    fn inference_json(&self) -> PyResult<String> {
        let sigma2 = residual_variance(&self.inner).map_err(to_py_err)?;
        let inference = coefficient_inference(&self.inner, sigma2).map_err(to_py_err)?;
        Ok(inference_json(&inference).to_string())
    }
}

/// Group-count selection over an exhaustive grid.
#[pyclass(frozen)]
struct Selection {
    inner: selection::SelectionResult,
}

#[pymethods]
impl Selection {
    #[getter]
    fn chosen(&self) -> Vec<usize> {
        self.inner.chosen.clone()
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }

    /// `(group_counts, qic)` per candidate; `None` for skipped tuples.
    #[getter]
    fn grid(&self) -> Vec<(Vec<usize>, Option<f64>)> {
        self.inner.grid.iter().map(|r| (r.group_counts.clone(), r.qic)).collect()
    }

    /// The selection document as a JSON string, in the driver's layout.
    fn to_json(&self) -> String {
        selection_json(&self.inner).to_string()
    }
}

/// Uniform random memberships.
#[pyfunction]
fn sample_memberships(n: usize, group_count: usize, seed: u64) -> PyResult<Memberships> {
    Ok(Memberships { inner: netgen::sample_memberships(n, group_count, None, seed).map_err(to_py_err)? })
}

/// Stochastic block model network aligned with the memberships.
#[pyfunction]
fn gen_sbm(memberships: PyRef<'_, Memberships>, p_in: f64, p_out: f64, seed: u64) -> PyResult<Network> {
    Ok(Network { inner: netgen::gen_sbm(&memberships.inner, p_in, p_out, seed).map_err(to_py_err)? })
}

/// Scale-free follower network.
#[pyfunction]
fn gen_powerlaw(n: usize, exponent: f64, k_max: usize, multiplier: usize, seed: u64) -> PyResult<Network> {
    Ok(Network { inner: netgen::gen_powerlaw(n, exponent, k_max, multiplier, seed).map_err(to_py_err)? })
}

/// Standard normal covariates for every mode over `t_len` response times.
#[pyfunction]
fn gen_covariates(dims: Vec<usize>, covariate_counts: Vec<usize>, t_len: usize, seed: u64) -> PyResult<Covariates> {
    Ok(Covariates {
        inner: model::gen_covariates(&dims, &covariate_counts, t_len, seed).map_err(to_py_err)?,
    })
}

fn unwrap_networks(networks: &[PyRef<'_, Network>]) -> Vec<NetworkLayer> {
    networks.iter().map(|n| n.inner.clone()).collect()
}

fn unwrap_memberships(memberships: &[PyRef<'_, Memberships>]) -> Vec<GroupAssignment> {
    memberships.iter().map(|m| m.inner.clone()).collect()
}

/// Simulates the model from a zero start; the covariates must span
/// `burn_in + t_len` times.
#[pyfunction]
#[pyo3(signature = (params, networks, memberships, covariates, t_len, burn_in=0, seed=0))]
fn simulate(
    params: PyRef<'_, Parameters>,
    networks: Vec<PyRef<'_, Network>>,
    memberships: Vec<PyRef<'_, Memberships>>,
    covariates: PyRef<'_, Covariates>,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<Series> {
    let series = model::simulate(
        &params.inner,
        &unwrap_networks(&networks),
        &unwrap_memberships(&memberships),
        &covariates.inner,
        t_len,
        burn_in,
        seed,
    )
    .map_err(to_py_err)?;
    Ok(Series { inner: series })
}

/// Alternating least-squares fit with latent memberships.
#[pyfunction]
#[pyo3(signature = (series, networks, covariates, group_counts, seed=0, max_iter=None, trials=None))]
fn fit(
    series: PyRef<'_, Series>,
    networks: Vec<PyRef<'_, Network>>,
    covariates: PyRef<'_, Covariates>,
    group_counts: Vec<usize>,
    seed: u64,
    max_iter: Option<usize>,
    trials: Option<usize>,
) -> PyResult<Fit> {
    let defaults = FitOptions::default();
    let options = FitOptions {
        seed,
        max_iter: max_iter.unwrap_or(defaults.max_iter),
        n_trials: trials.unwrap_or(defaults.n_trials),
        ..defaults
    };
    let fitted = estimator::fit(
        &series.inner,
        &unwrap_networks(&networks),
        &covariates.inner,
        &group_counts,
        &options,
    )
    .map_err(to_py_err)?;
    Ok(Fit { inner: fitted })
}

/// Single least-squares solve at known memberships.
#[pyfunction]
fn fit_oracle(
    series: PyRef<'_, Series>,
    networks: Vec<PyRef<'_, Network>>,
    covariates: PyRef<'_, Covariates>,
    memberships: Vec<PyRef<'_, Memberships>>,
) -> PyResult<Fit> {
    let fitted = estimator::fit_oracle(
        &series.inner,
        &unwrap_networks(&networks),
        &covariates.inner,
        &unwrap_memberships(&memberships),
    )
    .map_err(to_py_err)?;
    Ok(Fit { inner: fitted })
}

/// Information-criterion selection of the group counts.
#[pyfunction]
#[pyo3(signature = (series, networks, covariates, g_max, kappa=None, seed=0, max_iter=None, trials=None))]
#[allow(clippy::too_many_arguments)]
fn select(
    series: PyRef<'_, Series>,
    networks: Vec<PyRef<'_, Network>>,
    covariates: PyRef<'_, Covariates>,
    g_max: Vec<usize>,
    kappa: Option<f64>,
    seed: u64,
    max_iter: Option<usize>,
    trials: Option<usize>,
) -> PyResult<Selection> {
    let defaults = FitOptions::default();
    let options = FitOptions {
        seed,
        max_iter: max_iter.unwrap_or(defaults.max_iter),
        n_trials: trials.unwrap_or(defaults.n_trials),
        ..defaults
    };
    let result = selection::select(
        &series.inner,
        &unwrap_networks(&networks),
        &covariates.inner,
        &g_max,
        kappa,
        &options,
    )
    .map_err(to_py_err)?;
    Ok(Selection { inner: result })
}

/// Default penalty weight for a series length.
#[pyfunction]
fn default_kappa(t_len: usize) -> f64 {
    selection::default_kappa(t_len)
}

/// Smallest disagreement rate over group relabelings.
#[pyfunction]
fn misclustering(estimated: PyRef<'_, Memberships>, truth: PyRef<'_, Memberships>) -> PyResult<f64> {
    misclustering_rate(&estimated.inner, &truth.inner).map_err(to_py_err)
}

/// Disagreement rate after mapping estimated groups to their majority truth.
#[pyfunction]
fn chi_error(estimated: PyRef<'_, Memberships>, truth: PyRef<'_, Memberships>) -> PyResult<f64> {
    chi_error_rate(&estimated.inner, &truth.inner).map_err(to_py_err)
}

#[pymodule]
fn gtnar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Parameters>()?;
    m.add_class::<Memberships>()?;
    m.add_class::<Network>()?;
    m.add_class::<Covariates>()?;
    m.add_class::<Series>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Selection>()?;
    m.add_function(wrap_pyfunction!(sample_memberships, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sbm, m)?)?;
    m.add_function(wrap_pyfunction!(gen_powerlaw, m)?)?;
    m.add_function(wrap_pyfunction!(gen_covariates, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(default_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(misclustering, m)?)?;
    m.add_function(wrap_pyfunction!(chi_error, m)?)?;
    Ok(())
}
