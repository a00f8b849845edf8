//! File formats: CSV tables for data, JSON documents for parameters,
//! manifests, and results.
//!
//! On disk, node indices, group labels, and mode numbers are 1-based; time
//! starts at 0 for the series (the initial slice) and at 1 for covariates
//! (the time of the response they enter). In memory everything stays
//! 0-based, converted at these boundaries. Writers emit deterministic,
//! diff-friendly output: fixed header order and shortest round-trip float
//! formatting.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::inference::{InferenceResult, MetricReport};
use crate::model::{CovariatePanel, GroupedParameters, ModeCovariates, TensorSeries};
use crate::netgen::{row_normalize, GroupAssignment, NetworkLayer};
use crate::selection::SelectionResult;
use crate::tensor::{advance, DenseTensor};

fn file_error(path: &Path, action: &str, cause: impl Display) -> Error {
    Error::Validation(format!("cannot {} {}: {}", action, path.display(), cause))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| file_error(path, "read", e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| file_error(path, "write", e))
}

fn parse_index(field: &str, what: &str, path: &Path) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| file_error(path, "parse", format!("bad {} value {:?}", what, field)))?;
    Ok(v)
}

fn parse_float(field: &str, what: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| file_error(path, "parse", format!("bad {} value {:?}", what, field)))
}

fn csv_records(path: &Path, contents: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(contents.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| file_error(path, "parse", e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| file_error(path, "parse", e))?;
        rows.push(record.iter().map(|f| f.to_string()).collect());
    }
    Ok((headers, rows))
}

/// Writes a network as an edge list with header `src,dst`, 1-based indices,
/// rows sorted by source then destination.
pub fn write_network_csv(path: impl AsRef<Path>, network: &NetworkLayer) -> Result<()> {
    let path = path.as_ref();
    let adjacency = network.adjacency();
    let mut out = String::from("src,dst\n");
    for i in 0..network.n() {
        for j in 0..network.n() {
            if adjacency[(i, j)] != 0.0 {
                out.push_str(&format!("{},{}\n", i + 1, j + 1));
            }
        }
    }
    write_file(path, &out)
}

/// Reads an edge-list CSV into a row-normalized network over `n` nodes.
/// Indices are 1-based in the file; self-loops and out-of-range indices are
/// rejected.
pub fn read_network_csv(path: impl AsRef<Path>, n: usize) -> Result<NetworkLayer> {
    let path = path.as_ref();
    let contents = read_file(path)?;
    let (headers, rows) = csv_records(path, &contents)?;
    if headers != ["src", "dst"] {
        return Err(file_error(path, "parse", format!("expected header src,dst, got {:?}", headers)));
    }
    let mut adjacency = DMatrix::zeros(n, n);
    for row in &rows {
        if row.len() != 2 {
            return Err(file_error(path, "parse", format!("edge row {:?}", row)));
        }
        let src = parse_index(&row[0], "src", path)?;
        let dst = parse_index(&row[1], "dst", path)?;
        if src == 0 || dst == 0 || src > n || dst > n {
            return Err(file_error(
                path,
                "parse",
                format!("edge ({}, {}) outside 1..={}", src, dst, n),
            ));
        }
        adjacency[(src - 1, dst - 1)] = 1.0;
    }
    row_normalize(adjacency)
}

/// Writes a series as rows `i1,...,iq,t,y` with 1-based cell indices and
/// time from 0, cells in vectorization order within each time.
pub fn write_series_csv(path: impl AsRef<Path>, series: &TensorSeries) -> Result<()> {
    let path = path.as_ref();
    let dims = series.dims().to_vec();
    let mut out = String::new();
    for l in 0..dims.len() {
        out.push_str(&format!("i{},", l + 1));
    }
    out.push_str("t,y\n");
    for t in 0..=series.t_max() {
        let values = series.tensor(t).vectorize();
        let mut idx = vec![0usize; dims.len()];
        for &y in values {
            for &i in &idx {
                out.push_str(&format!("{},", i + 1));
            }
            out.push_str(&format!("{},{}\n", t, y));
            advance(&mut idx, &dims);
        }
    }
    write_file(path, &out)
}

/// Reads a series CSV, inferring the tensor shape from the largest indices.
/// Every cell must appear exactly once at every time from 0 to the largest.
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<TensorSeries> {
    let path = path.as_ref();
    let contents = read_file(path)?;
    let (headers, rows) = csv_records(path, &contents)?;
    if headers.len() < 3 || headers[headers.len() - 2] != "t" || headers[headers.len() - 1] != "y"
    {
        return Err(file_error(
            path,
            "parse",
            format!("expected header i1,...,iq,t,y, got {:?}", headers),
        ));
    }
    let q = headers.len() - 2;
    for (l, h) in headers[..q].iter().enumerate() {
        if *h != format!("i{}", l + 1) {
            return Err(file_error(path, "parse", format!("unexpected index column {:?}", h)));
        }
    }
    let mut parsed = Vec::with_capacity(rows.len());
    let mut dims = vec![0usize; q];
    let mut t_max = 0usize;
    for row in &rows {
        if row.len() != q + 2 {
            return Err(file_error(path, "parse", format!("row {:?}", row)));
        }
        let mut idx = vec![0usize; q];
        for l in 0..q {
            let i = parse_index(&row[l], "node index", path)?;
            if i == 0 {
                return Err(file_error(path, "parse", "node indices are 1-based"));
            }
            idx[l] = i - 1;
            dims[l] = dims[l].max(i);
        }
        let t = parse_index(&row[q], "time", path)?;
        t_max = t_max.max(t);
        let y = parse_float(&row[q + 1], "response", path)?;
        parsed.push((idx, t, y));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(file_error(path, "parse", "no data rows"));
    }
    let n_cells: usize = dims.iter().product();
    let expected = n_cells * (t_max + 1);
    if parsed.len() != expected {
        return Err(file_error(
            path,
            "parse",
            format!(
                "{} rows for shape {:?} over times 0..={}, expected {}",
                parsed.len(),
                dims,
                t_max,
                expected
            ),
        ));
    }
    let mut slices: Vec<Vec<Option<f64>>> = vec![vec![None; n_cells]; t_max + 1];
    for (idx, t, y) in parsed {
        let tensor = DenseTensor::zeros(dims.clone())?;
        let linear = tensor.linear_index(&idx)?;
        if slices[t][linear].replace(y).is_some() {
            return Err(file_error(
                path,
                "parse",
                format!("duplicate cell {:?} at time {}", idx.iter().map(|i| i + 1).collect::<Vec<_>>(), t),
            ));
        }
    }
    let mut tensors = Vec::with_capacity(t_max + 1);
    for (t, slice) in slices.into_iter().enumerate() {
        let data: Option<Vec<f64>> = slice.into_iter().collect();
        let data = data
            .ok_or_else(|| file_error(path, "parse", format!("missing cells at time {}", t)))?;
        tensors.push(DenseTensor::new(dims.clone(), data)?);
    }
    TensorSeries::new(tensors)
}

/// Writes one mode's covariates as rows `node,t,c1..cp`; `t` is the time of
/// the response the row enters, from 1.
pub fn write_covariates_csv(path: impl AsRef<Path>, covariates: &ModeCovariates) -> Result<()> {
    let path = path.as_ref();
    let p = covariates.covariate_count();
    let mut out = String::from("node,t");
    for c in 0..p {
        out.push_str(&format!(",c{}", c + 1));
    }
    out.push('\n');
    for t_slot in 0..covariates.t_len() {
        for node in 0..covariates.n_nodes() {
            out.push_str(&format!("{},{}", node + 1, t_slot + 1));
            for v in covariates.row(node, t_slot) {
                out.push_str(&format!(",{}", v));
            }
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// Reads one mode's covariate CSV for `n` nodes over `t_len` response times.
pub fn read_covariates_csv(
    path: impl AsRef<Path>,
    n: usize,
    t_len: usize,
) -> Result<ModeCovariates> {
    let path = path.as_ref();
    let contents = read_file(path)?;
    let (headers, rows) = csv_records(path, &contents)?;
    if headers.len() < 2 || headers[0] != "node" || headers[1] != "t" {
        return Err(file_error(
            path,
            "parse",
            format!("expected header node,t,c1..., got {:?}", headers),
        ));
    }
    let p = headers.len() - 2;
    for (c, h) in headers[2..].iter().enumerate() {
        if *h != format!("c{}", c + 1) {
            return Err(file_error(path, "parse", format!("unexpected covariate column {:?}", h)));
        }
    }
    let mut data = vec![f64::NAN; n * t_len * p];
    let mut seen = vec![false; n * t_len];
    for row in &rows {
        if row.len() != p + 2 {
            return Err(file_error(path, "parse", format!("row {:?}", row)));
        }
        let node = parse_index(&row[0], "node", path)?;
        let t = parse_index(&row[1], "time", path)?;
        if node == 0 || node > n || t == 0 || t > t_len {
            return Err(file_error(
                path,
                "parse",
                format!("covariate row for node {} time {} outside 1..={} x 1..={}", node, t, n, t_len),
            ));
        }
        let slot = (t - 1) * n + (node - 1);
        if seen[slot] {
            return Err(file_error(path, "parse", format!("duplicate node {} time {}", node, t)));
        }
        seen[slot] = true;
        for c in 0..p {
            data[slot * p + c] = parse_float(&row[2 + c], "covariate", path)?;
        }
    }
    if let Some(slot) = seen.iter().position(|s| !s) {
        return Err(file_error(
            path,
            "parse",
            format!("missing node {} time {}", slot % n + 1, slot / n + 1),
        ));
    }
    ModeCovariates::new(n, p, t_len, data)
}

/// Writes memberships as rows `node,group`, both 1-based.
pub fn write_memberships_csv(path: impl AsRef<Path>, assignment: &GroupAssignment) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("node,group\n");
    for (i, &g) in assignment.labels().iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, g + 1));
    }
    write_file(path, &out)
}

/// Reads a membership CSV; the group count is the largest label present.
pub fn read_memberships_csv(path: impl AsRef<Path>) -> Result<GroupAssignment> {
    let path = path.as_ref();
    let contents = read_file(path)?;
    let (headers, rows) = csv_records(path, &contents)?;
    if headers != ["node", "group"] {
        return Err(file_error(
            path,
            "parse",
            format!("expected header node,group, got {:?}", headers),
        ));
    }
    let n = rows.len();
    let mut labels = vec![usize::MAX; n];
    let mut group_count = 0usize;
    for row in &rows {
        if row.len() != 2 {
            return Err(file_error(path, "parse", format!("row {:?}", row)));
        }
        let node = parse_index(&row[0], "node", path)?;
        let group = parse_index(&row[1], "group", path)?;
        if node == 0 || node > n {
            return Err(file_error(path, "parse", format!("node {} outside 1..={}", node, n)));
        }
        if group == 0 {
            return Err(file_error(path, "parse", "group labels are 1-based"));
        }
        if labels[node - 1] != usize::MAX {
            return Err(file_error(path, "parse", format!("duplicate node {}", node)));
        }
        labels[node - 1] = group - 1;
        group_count = group_count.max(group);
    }
    GroupAssignment::new(labels, group_count)
}

fn zeta_to_json(zeta: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..zeta.nrows())
            .map(|g| Value::Array((0..zeta.ncols()).map(|c| json!(zeta[(g, c)])).collect()))
            .collect(),
    )
}

fn tensor_to_json(tensor: &DenseTensor) -> Value {
    json!({ "dims": tensor.dims(), "values": tensor.vectorize() })
}

fn params_to_json(params: &GroupedParameters) -> Value {
    json!({
        "lambda": params.lambda(),
        "zeta": params.zeta().iter().map(zeta_to_json).collect::<Vec<_>>(),
        "alpha": tensor_to_json(params.alpha()),
        "noise_sd": params.noise_sd(),
    })
}

/// Writes model parameters as a JSON document with per-mode blocks; the
/// lag-coefficient tensor is stored as dims plus first-index-fastest values.
pub fn write_params_json(path: impl AsRef<Path>, params: &GroupedParameters) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&params_to_json(params))
        .map_err(|e| file_error(path, "serialize", e))?;
    write_file(path, &(text + "\n"))
}

fn json_field<'v>(value: &'v Value, key: &str, path: &Path) -> Result<&'v Value> {
    value
        .get(key)
        .ok_or_else(|| file_error(path, "parse", format!("missing field {:?}", key)))
}

fn json_f64(value: &Value, what: &str, path: &Path) -> Result<f64> {
    value
        .as_f64()
        .ok_or_else(|| file_error(path, "parse", format!("{} is not a number", what)))
}

fn json_array<'v>(value: &'v Value, what: &str, path: &Path) -> Result<&'v Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| file_error(path, "parse", format!("{} is not an array", what)))
}

fn tensor_from_json(value: &Value, path: &Path) -> Result<DenseTensor> {
    let dims = json_array(json_field(value, "dims", path)?, "dims", path)?
        .iter()
        .map(|d| {
            d.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| file_error(path, "parse", "dims must be positive integers"))
        })
        .collect::<Result<Vec<usize>>>()?;
    let values = json_array(json_field(value, "values", path)?, "values", path)?
        .iter()
        .map(|v| json_f64(v, "tensor value", path))
        .collect::<Result<Vec<f64>>>()?;
    DenseTensor::new(dims, values)
}

/// Reads a parameter JSON document written by [`write_params_json`].
pub fn read_params_json(path: impl AsRef<Path>) -> Result<GroupedParameters> {
    let path = path.as_ref();
    let value: Value = serde_json::from_str(&read_file(path)?)
        .map_err(|e| file_error(path, "parse", e))?;
    let lambda = json_array(json_field(&value, "lambda", path)?, "lambda", path)?
        .iter()
        .map(|mode| {
            json_array(mode, "lambda mode", path)?
                .iter()
                .map(|v| json_f64(v, "lambda", path))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let zeta = json_array(json_field(&value, "zeta", path)?, "zeta", path)?
        .iter()
        .map(|mode| {
            let rows = json_array(mode, "zeta mode", path)?
                .iter()
                .map(|row| {
                    json_array(row, "zeta row", path)?
                        .iter()
                        .map(|v| json_f64(v, "zeta", path))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let g = rows.len();
            let p = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != p) {
                return Err(file_error(path, "parse", "ragged zeta rows"));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Ok(DMatrix::from_row_slice(g, p, &flat))
        })
        .collect::<Result<Vec<DMatrix<f64>>>>()?;
    let alpha = tensor_from_json(json_field(&value, "alpha", path)?, path)?;
    let noise_sd = json_f64(json_field(&value, "noise_sd", path)?, "noise_sd", path)?;
    GroupedParameters::new(lambda, zeta, alpha, noise_sd)
}

/// Dataset bundle description: file references plus generation metadata.
/// Paths are relative to the manifest's own directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Library version that wrote the bundle.
    pub version: String,
    /// Random generator family, always "chacha8" for generated bundles.
    pub rng: String,
    pub seed: u64,
    pub dims: Vec<usize>,
    /// Number of observed transitions; the series holds `t_len + 1` slices.
    pub t_len: usize,
    pub series: String,
    pub networks: Vec<String>,
    /// One entry per mode; `None` for modes without covariates.
    pub covariates: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memberships: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<String>,
    /// Generator names and derived seeds, for the record.
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

/// Writes a manifest as pretty-printed JSON.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| file_error(path, "serialize", e))?;
    write_file(path, &(text + "\n"))
}

/// Reads a manifest JSON document.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    serde_json::from_str(&read_file(path)?).map_err(|e| file_error(path, "parse", e))
}

/// Fully loaded dataset bundle.
#[derive(Debug)]
pub struct DatasetBundle {
    pub manifest: DatasetManifest,
    pub series: TensorSeries,
    pub networks: Vec<NetworkLayer>,
    pub covariates: CovariatePanel,
    pub memberships: Option<Vec<GroupAssignment>>,
    pub parameters: Option<GroupedParameters>,
}

/// Loads every file referenced by a manifest and cross-validates shapes.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |rel: &str| -> PathBuf { base.join(rel) };

    let q = manifest.dims.len();
    if manifest.networks.len() != q || manifest.covariates.len() != q {
        return Err(file_error(
            manifest_path,
            "parse",
            format!(
                "{} modes, but {} networks and {} covariate entries",
                q,
                manifest.networks.len(),
                manifest.covariates.len()
            ),
        ));
    }

    let series = read_series_csv(resolve(&manifest.series))?;
    if series.dims() != manifest.dims.as_slice() || series.t_max() != manifest.t_len {
        return Err(file_error(
            manifest_path,
            "validate",
            format!(
                "series has shape {:?} over {} transitions, manifest says {:?} over {}",
                series.dims(),
                series.t_max(),
                manifest.dims,
                manifest.t_len
            ),
        ));
    }

    let mut networks = Vec::with_capacity(q);
    for (l, rel) in manifest.networks.iter().enumerate() {
        networks.push(read_network_csv(resolve(rel), manifest.dims[l])?);
    }

    let mut modes = Vec::with_capacity(q);
    for (l, entry) in manifest.covariates.iter().enumerate() {
        modes.push(match entry {
            Some(rel) => read_covariates_csv(resolve(rel), manifest.dims[l], manifest.t_len)?,
            None => ModeCovariates::empty(manifest.dims[l], manifest.t_len),
        });
    }
    let covariates = CovariatePanel::new(modes)?;

    let memberships = match &manifest.memberships {
        Some(paths) => {
            if paths.len() != q {
                return Err(file_error(
                    manifest_path,
                    "parse",
                    format!("{} membership files for {} modes", paths.len(), q),
                ));
            }
            let mut all = Vec::with_capacity(q);
            for (l, rel) in paths.iter().enumerate() {
                let assignment = read_memberships_csv(resolve(rel))?;
                if assignment.n_nodes() != manifest.dims[l] {
                    return Err(file_error(
                        manifest_path,
                        "validate",
                        format!(
                            "mode {} memberships cover {} nodes, manifest says {}",
                            l + 1,
                            assignment.n_nodes(),
                            manifest.dims[l]
                        ),
                    ));
                }
                all.push(assignment);
            }
            Some(all)
        }
        None => None,
    };

    let parameters = match &manifest.parameters {
        Some(rel) => Some(read_params_json(resolve(rel))?),
        None => None,
    };

    Ok(DatasetBundle { manifest, series, networks, covariates, memberships, parameters })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn memberships_to_json(memberships: &[GroupAssignment]) -> Value {
    Value::Array(
        memberships
            .iter()
            .map(|g| Value::Array(g.labels().iter().map(|&l| json!(l + 1)).collect()))
            .collect(),
    )
}

/// Fit result as a JSON document: parameters by block, 1-based memberships
/// per mode, and the iteration trace. The normal system matrix itself is
/// not serialized.
pub fn fit_result_json(fit: &FitResult) -> Value {
    json!({
        "dims": fit.dims,
        "t_len": fit.t_len,
        "group_counts": fit.memberships.iter().map(|g| g.group_count()).collect::<Vec<_>>(),
        "effective_groups": fit.effective_groups,
        "q_value": fit.q_value,
        "converged": fit.converged,
        "init_kind": fit.init_kind,
        "parameters": params_to_json(&fit.params),
        "memberships": memberships_to_json(&fit.memberships),
        "trace": fit.trace.iter().map(|s| json!({
            "q_value": s.q_value,
            "membership_changes": s.membership_changes,
        })).collect::<Vec<_>>(),
    })
}

/// Inference result as a JSON document with per-coefficient rows and the
/// full covariance matrix.
pub fn inference_json(inference: &InferenceResult) -> Value {
    let k = inference.covariance.nrows();
    json!({
        "sigma2_hat": inference.sigma2_hat,
        "coefficients": inference.coefficients.iter().map(|c| json!({
            "name": c.name,
            "estimate": c.estimate,
            "std_error": c.std_error,
            "ci_lower": c.ci_lower,
            "ci_upper": c.ci_upper,
            "p_value": c.p_value,
        })).collect::<Vec<_>>(),
        "covariance": (0..k).map(|i| {
            (0..k).map(|j| json!(inference.covariance[(i, j)])).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
    })
}

/// Selection result as a JSON document; non-finite scores (perfect fits)
/// serialize as null.
pub fn selection_json(selection: &SelectionResult) -> Value {
    json!({
        "chosen": selection.chosen,
        "kappa": selection.kappa,
        "grid": selection.grid.iter().map(|r| json!({
            "group_counts": r.group_counts,
            "q_value": r.q_value.map(finite_or_null),
            "qic": r.qic.map(finite_or_null),
            "converged": r.converged,
            "init_kind": r.init_kind,
            "skip_reason": r.skip_reason,
        })).collect::<Vec<_>>(),
    })
}

/// Metric report as a JSON document.
pub fn metric_report_json(report: &MetricReport) -> Value {
    json!({
        "replicates": report.replicates,
        "dims": report.dims,
        "t_len": report.t_len,
        "blocks": report.blocks.iter().map(|b| json!({
            "name": b.name,
            "rmse": b.rmse,
            "rmse_oracle": b.rmse_oracle,
            "coverage": b.coverage,
            "node_rmse": b.node_rmse,
        })).collect::<Vec<_>>(),
        "coverage_by_coefficient": report.coverage_by_coefficient.iter().map(|c| json!({
            "name": c.name,
            "coverage": c.coverage,
        })).collect::<Vec<_>>(),
        "misclustering": report.misclustering,
        "chi_error": report.chi_error,
        "pseudo_distances": report.pseudo_distances,
        "selection_frequency": report.selection_frequency.iter().map(|freq| {
            Value::Object(
                freq.iter().map(|(g, f)| (g.to_string(), json!(f))).collect(),
            )
        }).collect::<Vec<_>>(),
    })
}

/// Block names carry a 1-based mode number; the lag block has none.
fn block_mode(name: &str) -> Option<usize> {
    name.strip_suffix(']')?
        .rsplit(' ')
        .next()?
        .parse::<usize>()
        .ok()
        .map(|m| m - 1)
}

/// Renders a metric report as a CSV table with one row per coefficient
/// block: `block,N1,...,Nq,T,RMSE,RMSE_oracle,CP,mis-clustering`. The
/// mis-clustering column repeats the block's mode rate and is empty for the
/// lag block.
pub fn metric_report_csv(report: &MetricReport) -> String {
    let mut out = String::from("block");
    for l in 0..report.dims.len() {
        out.push_str(&format!(",N{}", l + 1));
    }
    out.push_str(",T,RMSE,RMSE_oracle,CP,mis-clustering\n");
    for block in &report.blocks {
        out.push_str(&block.name);
        for &n in &report.dims {
            out.push_str(&format!(",{}", n));
        }
        out.push_str(&format!(",{}", report.t_len));
        out.push_str(&format!(",{}", block.rmse));
        match block.rmse_oracle {
            Some(v) => out.push_str(&format!(",{}", v)),
            None => out.push(','),
        }
        out.push_str(&format!(",{}", block.coverage));
        match block_mode(&block.name) {
            Some(l) => out.push_str(&format!(",{}\n", report.misclustering[l])),
            None => out.push_str(",\n"),
        }
    }
    out
}

/// Writes a JSON value with a trailing newline.
pub fn write_json(path: impl AsRef<Path>, value: &Value) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string_pretty(value).map_err(|e| file_error(path, "serialize", e))?;
    write_file(path, &(text + "\n"))
}

/// Convenience bundle writer: emits every file of a dataset into `dir` and
/// returns the manifest (already written as `manifest.json`).
#[allow(clippy::too_many_arguments)]
pub fn save_dataset(
    dir: impl AsRef<Path>,
    seed: u64,
    series: &TensorSeries,
    networks: &[NetworkLayer],
    covariates: &CovariatePanel,
    memberships: Option<&[GroupAssignment]>,
    parameters: Option<&GroupedParameters>,
    metadata: Map<String, Value>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| file_error(dir, "create", e))?;
    let q = series.dims().len();

    write_series_csv(dir.join("series.csv"), series)?;
    let mut network_files = Vec::with_capacity(q);
    for (l, network) in networks.iter().enumerate() {
        let name = format!("network_mode{}.csv", l + 1);
        write_network_csv(dir.join(&name), network)?;
        network_files.push(name);
    }
    let mut covariate_files = Vec::with_capacity(q);
    for l in 0..q {
        let mode = covariates.mode(l);
        if mode.covariate_count() > 0 {
            let name = format!("covariates_mode{}.csv", l + 1);
            write_covariates_csv(dir.join(&name), mode)?;
            covariate_files.push(Some(name));
        } else {
            covariate_files.push(None);
        }
    }
    let membership_files = match memberships {
        Some(all) => {
            let mut files = Vec::with_capacity(q);
            for (l, assignment) in all.iter().enumerate() {
                let name = format!("memberships_mode{}.csv", l + 1);
                write_memberships_csv(dir.join(&name), assignment)?;
                files.push(name);
            }
            Some(files)
        }
        None => None,
    };
    let parameter_file = match parameters {
        Some(params) => {
            write_params_json(dir.join("parameters.json"), params)?;
            Some("parameters.json".to_string())
        }
        None => None,
    };

    let manifest = DatasetManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        rng: crate::rng::RNG_ALGORITHM.to_string(),
        seed,
        dims: series.dims().to_vec(),
        t_len: series.t_max(),
        series: "series.csv".to_string(),
        networks: network_files,
        covariates: covariate_files,
        memberships: membership_files,
        parameters: parameter_file,
        metadata,
    };
    write_manifest(dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Keeps `BTreeMap` available for callers assembling metadata.
pub type Metadata = BTreeMap<String, Value>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_covariates, simulate};
    use crate::netgen::{gen_sbm, sample_memberships};
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn params() -> GroupedParameters {
        GroupedParameters::new(
            vec![vec![0.25, -0.25], vec![0.3, -0.2]],
            vec![
                DMatrix::from_row_slice(2, 1, &[1.0, -0.6]),
                DMatrix::from_row_slice(2, 1, &[0.8, -0.9]),
            ],
            DenseTensor::new(vec![2, 2], vec![0.2, -0.1, -0.2, 0.3]).unwrap(),
            0.7,
        )
        .unwrap()
    }

    #[test]
    fn network_roundtrip_preserves_the_adjacency() {
        let dir = tempdir().unwrap();
        let members = sample_memberships(7, 2, None, 3).unwrap();
        let network = gen_sbm(&members, 0.8, 0.4, 4).unwrap();
        let path = dir.path().join("net.csv");
        write_network_csv(&path, &network).unwrap();
        let back = read_network_csv(&path, 7).unwrap();
        assert_eq!(network.adjacency(), back.adjacency());
        assert_eq!(network.weights(), back.weights());
    }

    #[test]
    fn network_reader_rejects_self_loops() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.csv");
        fs::write(&path, "src,dst\n1,2\n2,2\n").unwrap();
        let err = read_network_csv(&path, 3).unwrap_err();
        assert!(err.to_string().contains("diagonal"), "{}", err);
    }

    #[test]
    fn network_reader_rejects_out_of_range_nodes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.csv");
        fs::write(&path, "src,dst\n1,4\n").unwrap();
        let err = read_network_csv(&path, 3).unwrap_err();
        assert!(err.to_string().contains("outside"), "{}", err);
    }

    #[test]
    fn series_roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let dims = [3usize, 2];
        let memberships = vec![
            sample_memberships(3, 2, None, 11).unwrap(),
            sample_memberships(2, 2, None, 12).unwrap(),
        ];
        let networks = vec![
            gen_sbm(&memberships[0], 0.9, 0.6, 13).unwrap(),
            gen_sbm(&memberships[1], 0.9, 0.6, 14).unwrap(),
        ];
        let covariates = gen_covariates(&dims, &[1, 1], 4, 15).unwrap();
        let series =
            simulate(&params(), &networks, &memberships, &covariates, 4, 0, 16).unwrap();

        let first = dir.path().join("series.csv");
        write_series_csv(&first, &series).unwrap();
        let back = read_series_csv(&first).unwrap();
        assert_eq!(back.dims(), series.dims());
        assert_eq!(back.t_max(), series.t_max());
        for t in 0..=series.t_max() {
            assert_eq!(back.tensor(t).vectorize(), series.tensor(t).vectorize());
        }
        let second = dir.path().join("series2.csv");
        write_series_csv(&second, &back).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn series_reader_wants_complete_grids() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("series.csv");
        fs::write(&path, "i1,i2,t,y\n1,1,0,1.0\n2,1,0,2.0\n1,1,1,3.0\n").unwrap();
        let err = read_series_csv(&path).unwrap_err();
        assert!(err.to_string().contains("expected"), "{}", err);
    }

    #[test]
    fn series_reader_reports_duplicates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("series.csv");
        fs::write(&path, "i1,t,y\n1,0,1.0\n2,0,2.0\n1,1,3.0\n1,1,4.0\n").unwrap();
        let err = read_series_csv(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{}", err);
    }

    #[test]
    fn covariate_roundtrip_preserves_every_row() {
        let dir = tempdir().unwrap();
        let covariates = gen_covariates(&[4, 3], &[2, 1], 5, 21).unwrap();
        let path = dir.path().join("cov.csv");
        write_covariates_csv(&path, covariates.mode(0)).unwrap();
        let back = read_covariates_csv(&path, 4, 5).unwrap();
        assert_eq!(back.covariate_count(), 2);
        for t in 0..5 {
            for node in 0..4 {
                assert_eq!(back.row(node, t), covariates.mode(0).row(node, t));
            }
        }
    }

    #[test]
    fn membership_files_are_one_based() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("members.csv");
        fs::write(&path, "node,group\n1,1\n2,2\n3,1\n").unwrap();
        let assignment = read_memberships_csv(&path).unwrap();
        assert_eq!(assignment.labels(), &[0, 1, 0]);
        assert_eq!(assignment.group_count(), 2);

        let out = dir.path().join("members_out.csv");
        write_memberships_csv(&out, &assignment).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap(), "node,group\n1,1\n2,2\n3,1\n");
    }

    #[test]
    fn params_json_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("params.json");
        let p = params();
        write_params_json(&path, &p).unwrap();
        let back = read_params_json(&path).unwrap();
        assert_eq!(back.lambda(), p.lambda());
        assert_eq!(back.zeta(), p.zeta());
        assert_eq!(back.alpha().vectorize(), p.alpha().vectorize());
        assert_eq!(back.noise_sd(), p.noise_sd());
    }

    #[test]
    fn dataset_bundle_roundtrips_through_the_manifest() {
        let dir = tempdir().unwrap();
        let dims = [5usize, 4];
        let truth = GroupedParameters::new(
            vec![vec![0.25, -0.25], vec![0.3, -0.2]],
            vec![
                DMatrix::from_row_slice(2, 1, &[1.0, -0.6]),
                DMatrix::zeros(2, 0),
            ],
            DenseTensor::new(vec![2, 2], vec![0.2, -0.1, -0.2, 0.3]).unwrap(),
            0.7,
        )
        .unwrap();
        let memberships = vec![
            sample_memberships(5, 2, None, 31).unwrap(),
            sample_memberships(4, 2, None, 32).unwrap(),
        ];
        let networks = vec![
            gen_sbm(&memberships[0], 0.9, 0.6, 33).unwrap(),
            gen_sbm(&memberships[1], 0.9, 0.6, 34).unwrap(),
        ];
        let covariates = gen_covariates(&dims, &[1, 0], 6, 35).unwrap();
        let series =
            simulate(&truth, &networks, &memberships, &covariates, 6, 0, 36).unwrap();

        let manifest = save_dataset(
            dir.path(),
            36,
            &series,
            &networks,
            &covariates,
            Some(&memberships),
            Some(&truth),
            Map::new(),
        )
        .unwrap();
        assert_eq!(manifest.rng, "chacha8");
        assert_eq!(manifest.covariates[1], None);

        let bundle = load_dataset(dir.path().join("manifest.json")).unwrap();
        assert_eq!(bundle.series.dims(), series.dims());
        for t in 0..=series.t_max() {
            assert_eq!(bundle.series.tensor(t).vectorize(), series.tensor(t).vectorize());
        }
        for l in 0..2 {
            assert_eq!(bundle.networks[l].adjacency(), networks[l].adjacency());
            assert_eq!(
                bundle.memberships.as_ref().unwrap()[l].labels(),
                memberships[l].labels()
            );
        }
        assert_eq!(bundle.covariates.covariate_counts(), vec![1, 0]);
        for t in 0..6 {
            for node in 0..5 {
                assert_eq!(
                    bundle.covariates.mode(0).row(node, t),
                    covariates.mode(0).row(node, t)
                );
            }
        }
        let loaded_params = bundle.parameters.unwrap();
        assert_eq!(loaded_params.lambda(), truth.lambda());
        assert_relative_eq!(loaded_params.noise_sd(), 0.7);
    }

    #[test]
    fn missing_files_produce_errors_naming_the_path() {
        let err = read_series_csv("/nonexistent/series.csv").unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("/nonexistent/series.csv"), "{}", err);
    }

    #[test]
    fn metric_csv_has_the_documented_layout() {
        let report = MetricReport {
            replicates: 2,
            dims: vec![10, 8],
            t_len: 6,
            blocks: vec![
                crate::inference::BlockMetrics {
                    name: "lambda[mode 1]".into(),
                    rmse: 0.5,
                    rmse_oracle: Some(0.25),
                    coverage: 0.9,
                    node_rmse: 0.4,
                },
                crate::inference::BlockMetrics {
                    name: "alpha".into(),
                    rmse: 0.125,
                    rmse_oracle: None,
                    coverage: 1.0,
                    node_rmse: 0.125,
                },
            ],
            coverage_by_coefficient: vec![],
            misclustering: vec![0.125, 0.0],
            chi_error: vec![0.0, 0.0],
            pseudo_distances: vec![0.25, 0.5],
            selection_frequency: vec![BTreeMap::new(), BTreeMap::new()],
        };
        let csv = metric_report_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "block,N1,N2,T,RMSE,RMSE_oracle,CP,mis-clustering");
        assert_eq!(lines[1], "lambda[mode 1],10,8,6,0.5,0.25,0.9,0.125");
        assert_eq!(lines[2], "alpha,10,8,6,0.125,,1,");
    }

    #[test]
    fn result_documents_use_one_based_labels_and_null_for_infinities() {
        assert_eq!(finite_or_null(f64::NEG_INFINITY), Value::Null);
        assert_eq!(finite_or_null(2.5), json!(2.5));
        let members =
            vec![GroupAssignment::new(vec![0, 1, 0], 2).unwrap()];
        let value = memberships_to_json(&members);
        assert_eq!(value, json!([[1, 2, 1]]));
    }
}
