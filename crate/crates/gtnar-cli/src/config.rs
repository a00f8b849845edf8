//! Experiment configuration: a JSON file describing the data-generating
//! process for `generate` and `benchmark`. Paths inside the file resolve
//! relative to the file's own directory.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Map, Value};

use gtnar::error::{Error, Result};
use gtnar::io::read_network_csv;
use gtnar::model::GroupedParameters;
use gtnar::netgen::{
    default_sbm_probs, gen_powerlaw, gen_sbm, sample_memberships, GroupAssignment, NetworkLayer,
    POWERLAW_DEFAULT_EXPONENT, POWERLAW_DEFAULT_MULTIPLIER,
};
use gtnar::rng::{derive_seed, streams};
use gtnar::tensor::{advance, DenseTensor};
use nalgebra::DMatrix;

/// Network recipe for one mode: a named generator or an edge-list file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NetworkSpec {
    Named(String),
    File { file: String },
}

impl NetworkSpec {
    /// Short name recorded in dataset metadata.
    pub fn kind(&self) -> &str {
        match self {
            NetworkSpec::Named(name) => name,
            NetworkSpec::File { .. } => "file",
        }
    }
}

fn default_replicates() -> usize {
    1
}

/// Data-generating process description shared by `generate` and `benchmark`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mode sizes `N_1, ..., N_q`.
    pub dims: Vec<usize>,
    /// Number of observed transitions.
    pub t_len: usize,
    /// True group counts used to draw memberships and parameters.
    pub group_counts: Vec<usize>,
    /// Candidate grid bounds; benchmark replicates also run selection when set.
    #[serde(default)]
    pub g_max: Option<Vec<usize>>,
    /// Parameter JSON file; omitted means built-in well-separated defaults.
    #[serde(default)]
    pub parameters: Option<String>,
    /// One network recipe per mode.
    pub networks: Vec<NetworkSpec>,
    /// Covariates per mode; defaults to the parameter file's counts, or one
    /// covariate per mode when parameters are generated.
    #[serde(default)]
    pub covariate_counts: Option<Vec<usize>>,
    /// Noise standard deviation, overriding the parameter file's value.
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Penalty weight override for selection runs.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub out: Option<String>,
    /// Transitions simulated and discarded before the recorded series.
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub trials: Option<usize>,
}

fn config_error(path: &Path, cause: impl Display) -> Error {
    Error::Validation(format!("config {}: {}", path.display(), cause))
}

/// Reads and validates a config file, returning it with its base directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ExperimentConfig, PathBuf)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read config {}: {}", path.display(), e)))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| config_error(path, e))?;
    let q = config.dims.len();
    if q == 0 {
        return Err(config_error(path, "dims must be non-empty"));
    }
    if config.dims.iter().any(|&n| n == 0) {
        return Err(config_error(path, "mode sizes must be positive"));
    }
    if config.t_len == 0 {
        return Err(config_error(path, "t_len must be positive"));
    }
    if config.group_counts.len() != q {
        return Err(config_error(
            path,
            format!("{} group counts for {} modes", config.group_counts.len(), q),
        ));
    }
    if config.group_counts.iter().zip(&config.dims).any(|(&g, &n)| g == 0 || g > n) {
        return Err(config_error(path, "each group count must lie in 1..=N_l"));
    }
    if config.networks.len() != q {
        return Err(config_error(
            path,
            format!("{} network entries for {} modes", config.networks.len(), q),
        ));
    }
    for spec in &config.networks {
        if let NetworkSpec::Named(name) = spec {
            if name != "sbm" && name != "powerlaw" {
                return Err(config_error(
                    path,
                    format!("unknown network kind {:?}; use sbm, powerlaw, or {{\"file\": ...}}", name),
                ));
            }
        }
    }
    if let Some(p) = &config.covariate_counts {
        if p.len() != q {
            return Err(config_error(path, format!("{} covariate counts for {} modes", p.len(), q)));
        }
    }
    if let Some(g_max) = &config.g_max {
        if g_max.len() != q || g_max.iter().any(|&g| g == 0) {
            return Err(config_error(path, "g_max needs one positive bound per mode"));
        }
    }
    if config.replicates == 0 {
        return Err(config_error(path, "replicates must be at least 1"));
    }
    if let Some(sd) = config.noise_sd {
        if !sd.is_finite() || sd < 0.0 {
            return Err(config_error(path, format!("noise_sd {} must be finite and non-negative", sd)));
        }
    }
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((config, base))
}

/// Built-in parameter family: group momentum effects spread over
/// `[-0.5/q, 0.5/q]`, covariate effects alternating in sign and growing with
/// the group index, lag effects `0.2` on the diagonal tuples and `-0.1` off
/// it. Stable for any mode count since the group-wise bound stays below
/// `0.5 + 0.2`.
pub fn default_parameters(
    group_counts: &[usize],
    covariate_counts: &[usize],
    noise_sd: f64,
) -> Result<GroupedParameters> {
    let q = group_counts.len();
    let span = 0.5 / q as f64;
    let lambda: Vec<Vec<f64>> = group_counts
        .iter()
        .map(|&g| {
            (0..g)
                .map(|k| {
                    if g == 1 {
                        span
                    } else {
                        -span + 2.0 * span * k as f64 / (g - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let zeta: Vec<DMatrix<f64>> = group_counts
        .iter()
        .zip(covariate_counts)
        .map(|(&g, &p)| {
            DMatrix::from_fn(g, p, |k, c| {
                let sign = if (k + c) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (0.6 + 0.5 * k as f64)
            })
        })
        .collect();
    let total: usize = group_counts.iter().product();
    let mut tuple = vec![0usize; q];
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        let diagonal = tuple.iter().all(|&g| g == tuple[0]);
        values.push(if diagonal { 0.2 } else { -0.1 });
        advance(&mut tuple, group_counts);
    }
    let alpha = DenseTensor::new(group_counts.to_vec(), values)?;
    GroupedParameters::new(lambda, zeta, alpha, noise_sd)
}

/// Resolves the true parameters: the referenced file when present, otherwise
/// built-in defaults; `noise_sd` from the config wins either way.
pub fn resolve_parameters(config: &ExperimentConfig, base: &Path) -> Result<GroupedParameters> {
    let params = match &config.parameters {
        Some(rel) => {
            let params = gtnar::io::read_params_json(base.join(rel))?;
            if params.group_counts() != config.group_counts {
                return Err(Error::Validation(format!(
                    "parameter file has group counts {:?}, config says {:?}",
                    params.group_counts(),
                    config.group_counts
                )));
            }
            if let Some(p) = &config.covariate_counts {
                if params.covariate_counts() != *p {
                    return Err(Error::Validation(format!(
                        "parameter file has covariate counts {:?}, config says {:?}",
                        params.covariate_counts(),
                        p
                    )));
                }
            }
            params
        }
        None => {
            let p = config
                .covariate_counts
                .clone()
                .unwrap_or_else(|| vec![1; config.dims.len()]);
            default_parameters(&config.group_counts, &p, config.noise_sd.unwrap_or(1.0))?
        }
    };
    match config.noise_sd {
        Some(sd) if sd != params.noise_sd() => GroupedParameters::new(
            params.lambda().to_vec(),
            params.zeta().to_vec(),
            params.alpha().clone(),
            sd,
        ),
        _ => Ok(params),
    }
}

/// Fixed part of an experiment: truth drawn once from the master seed and
/// shared by every replicate.
pub struct Scenario {
    pub params: GroupedParameters,
    pub memberships: Vec<GroupAssignment>,
    pub networks: Vec<NetworkLayer>,
    pub membership_seeds: Vec<u64>,
    pub network_seeds: Vec<u64>,
}

impl Scenario {
    /// Generation metadata recorded in manifests and reports.
    pub fn metadata(&self, config: &ExperimentConfig, extra: &[(&str, Value)]) -> Map<String, Value> {
        let mut map = Map::new();
        map.insert(
            "generators".into(),
            json!({
                "memberships": "uniform",
                "networks": config.networks.iter().map(NetworkSpec::kind).collect::<Vec<_>>(),
                "covariates": "standard-normal",
                "noise": "gaussian",
            }),
        );
        map.insert(
            "seeds".into(),
            json!({
                "memberships": self.membership_seeds,
                "networks": self.network_seeds,
            }),
        );
        map.insert("group_counts".into(), json!(config.group_counts));
        map.insert("noise_sd".into(), json!(self.params.noise_sd()));
        map.insert("burn_in".into(), json!(config.burn_in));
        for (key, value) in extra {
            map.insert((*key).into(), value.clone());
        }
        map
    }
}

/// Uniform memberships resampled until every group is populated; the seed
/// that produced the accepted draw is returned for the record.
fn populated_memberships(n: usize, groups: usize, first_seed: u64) -> Result<(GroupAssignment, u64)> {
    let mut seed = first_seed;
    for _ in 0..64 {
        let assignment = sample_memberships(n, groups, None, seed)?;
        if assignment.empty_groups().is_empty() {
            return Ok((assignment, seed));
        }
        seed = derive_seed(seed, 1);
    }
    Err(Error::Validation(format!(
        "could not draw {} populated groups over {} nodes; increase the mode size",
        groups, n
    )))
}

/// Draws the memberships and networks of an experiment from the master seed.
pub fn build_scenario(config: &ExperimentConfig, base: &Path, master_seed: u64) -> Result<Scenario> {
    let params = resolve_parameters(config, base)?;
    let q = config.dims.len();
    let mut memberships = Vec::with_capacity(q);
    let mut membership_seeds = Vec::with_capacity(q);
    for l in 0..q {
        let first = derive_seed(master_seed, streams::MEMBERSHIPS + l as u64);
        let (assignment, seed) = populated_memberships(config.dims[l], config.group_counts[l], first)?;
        memberships.push(assignment);
        membership_seeds.push(seed);
    }

    let mut networks = Vec::with_capacity(q);
    let mut network_seeds = Vec::with_capacity(q);
    for l in 0..q {
        let n = config.dims[l];
        let seed = derive_seed(master_seed, streams::NETWORKS + l as u64);
        let network = match &config.networks[l] {
            NetworkSpec::Named(name) if name == "sbm" => {
                let (p_in, p_out) = default_sbm_probs(n);
                gen_sbm(&memberships[l], p_in, p_out, seed)?
            }
            NetworkSpec::Named(_) => {
                let k_max = (n / POWERLAW_DEFAULT_MULTIPLIER).max(1);
                gen_powerlaw(n, POWERLAW_DEFAULT_EXPONENT, k_max, POWERLAW_DEFAULT_MULTIPLIER, seed)?
            }
            NetworkSpec::File { file } => read_network_csv(base.join(file), n)?,
        };
        networks.push(network);
        network_seeds.push(seed);
    }

    Ok(Scenario { params, memberships, networks, membership_seeds, network_seeds })
}
