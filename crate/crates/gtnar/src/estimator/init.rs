//! Membership initialization candidates.
//!
//! Three families of starting assignments are drawn, each `n_trials` times:
//!
//! 1. per-node least squares of the node's slice-aggregated response on its
//!    aggregated network regressor, aggregated lag, and own covariates,
//!    followed by k-means on the full coefficient vectors;
//! 2. the same regressions but clustering only the network and lag
//!    coefficients, which separates groups whose covariate effects overlap;
//! 3. uniformly random labels.
//!
//! Nodes whose regression is degenerate fall back to a random label. When the
//! series is too short for the node regressions, only random candidates are
//! produced.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::estimator::cells::CellStats;
use crate::estimator::kmeans::kmeans;
use crate::estimator::ldlt::LdltFactor;
use crate::model::CovariatePanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitKind {
    NodeRegression,
    MomentumOnly,
    Random,
}

impl InitKind {
    pub(crate) fn as_str(self) -> &'static str {
        match self {
            InitKind::NodeRegression => "node-regression",
            InitKind::MomentumOnly => "momentum-only",
            InitKind::Random => "random",
        }
    }
}

pub(crate) struct InitCandidate {
    pub labels: Vec<Vec<usize>>,
    pub kind: InitKind,
}

/// Ordinary least squares of one node's aggregated series on
/// `(aggregated regressor, aggregated lag, own covariates)`; `None` when the
/// node's design is singular.
fn node_coefficients(
    cells: &CellStats,
    covariates: &CovariatePanel,
    mode: usize,
) -> Vec<Option<Vec<f64>>> {
    let n = cells.dims[mode];
    let t_len = cells.t_len;
    let p = covariates.mode(mode).covariate_count();
    let d = 2 + p;
    let agg = &cells.agg[mode];
    let mut out = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for i in 0..n {
        let mut a = nalgebra::DMatrix::zeros(d, d);
        let mut rhs = vec![0.0; d];
        for t in 1..=t_len {
            let slot = i * t_len + (t - 1);
            z[0] = agg.reg[slot];
            z[1] = agg.lag[slot];
            z[2..].copy_from_slice(covariates.mode(mode).row(i, t - 1));
            let y = agg.y[slot];
            for r in 0..d {
                for c in 0..=r {
                    a[(r, c)] += z[r] * z[c];
                    if r != c {
                        a[(c, r)] = a[(r, c)];
                    }
                }
                rhs[r] += y * z[r];
            }
        }
        out.push(LdltFactor::new(&a).ok().map(|f| f.solve(&rhs)));
    }
    out
}

/// k-means on the defined coefficient rows, random labels for the rest.
fn cluster_labels(
    coefs: &[Option<Vec<f64>>],
    dim: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let defined: Vec<usize> = (0..coefs.len()).filter(|&i| coefs[i].is_some()).collect();
    let points: Vec<f64> = defined
        .iter()
        .flat_map(|&i| coefs[i].as_ref().expect("defined").iter().take(dim).copied())
        .collect();
    let clustered = kmeans(&points, defined.len(), dim, k, rng, 50);
    let mut labels = vec![usize::MAX; coefs.len()];
    for (slot, &i) in defined.iter().enumerate() {
        labels[i] = clustered[slot];
    }
    for label in labels.iter_mut() {
        if *label == usize::MAX {
            *label = rng.gen_range(0..k);
        }
    }
    labels
}

pub(crate) fn build_candidates(
    cells: &CellStats,
    covariates: &CovariatePanel,
    group_counts: &[usize],
    n_trials: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<InitCandidate> {
    let q = cells.dims.len();
    let random = |rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
        (0..q)
            .map(|l| (0..cells.dims[l]).map(|_| rng.gen_range(0..group_counts[l])).collect())
            .collect()
    };

    // The node regressions need at least as many transitions as columns.
    let d_max = 2 + covariates.covariate_counts().iter().max().copied().unwrap_or(0);
    let mut candidates = Vec::new();
    if cells.t_len < d_max {
        for _ in 0..3 * n_trials {
            candidates.push(InitCandidate { labels: random(rng), kind: InitKind::Random });
        }
        return candidates;
    }

    let coefs: Vec<Vec<Option<Vec<f64>>>> =
        (0..q).map(|l| node_coefficients(cells, covariates, l)).collect();
    for _ in 0..n_trials {
        for kind in [InitKind::NodeRegression, InitKind::MomentumOnly, InitKind::Random] {
            let labels = match kind {
                InitKind::NodeRegression => (0..q)
                    .map(|l| {
                        let dim = 2 + covariates.mode(l).covariate_count();
                        cluster_labels(&coefs[l], dim, group_counts[l], rng)
                    })
                    .collect(),
                InitKind::MomentumOnly => (0..q)
                    .map(|l| cluster_labels(&coefs[l], 2, group_counts[l], rng))
                    .collect(),
                InitKind::Random => random(rng),
            };
            candidates.push(InitCandidate { labels, kind });
        }
    }
    candidates
}
