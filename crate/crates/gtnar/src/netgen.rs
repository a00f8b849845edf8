//! Synthetic network layers and group memberships.
//!
//! Networks are directed graphs on `n` nodes stored as dense binary
//! adjacency matrices with a zero diagonal. Row normalization divides each
//! row by its out-degree, so the weight matrix encodes the average over the
//! nodes a given node follows; rows with no outgoing edges stay zero.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Directed network with its row-normalized weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayer {
    adjacency: DMatrix<f64>,
    weights: DMatrix<f64>,
    out_degrees: Vec<usize>,
    isolated: Vec<usize>,
}

impl NetworkLayer {
    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Binary adjacency matrix; entry `(i, j)` is 1 when node `i` follows node `j`.
    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Row-normalized weights `w_ij = a_ij / out_degree(i)`.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Out-degree of each node.
    pub fn out_degrees(&self) -> &[usize] {
        &self.out_degrees
    }

    /// Nodes with no outgoing edges; their weight rows are identically zero.
    pub fn isolated_nodes(&self) -> &[usize] {
        &self.isolated
    }
}

/// Validates a binary zero-diagonal adjacency matrix and row-normalizes it.
pub fn row_normalize(adjacency: DMatrix<f64>) -> Result<NetworkLayer> {
    if adjacency.nrows() != adjacency.ncols() {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {}x{}",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let n = adjacency.nrows();
    for i in 0..n {
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(Error::Validation(format!(
                    "adjacency entry ({}, {}) is {}, expected 0 or 1",
                    i, j, a
                )));
            }
            if i == j && a != 0.0 {
                return Err(Error::Validation(format!("adjacency diagonal entry {} is nonzero", i)));
            }
        }
    }

    let mut weights = adjacency.clone();
    let mut out_degrees = Vec::with_capacity(n);
    let mut isolated = Vec::new();
    for i in 0..n {
        let degree = adjacency.row(i).iter().filter(|&&a| a != 0.0).count();
        out_degrees.push(degree);
        if degree == 0 {
            isolated.push(i);
        } else {
            let inv = 1.0 / degree as f64;
            for j in 0..n {
                weights[(i, j)] *= inv;
            }
        }
    }
    Ok(NetworkLayer { adjacency, weights, out_degrees, isolated })
}

/// Default stochastic block model edge probabilities for `n` nodes:
/// `20/n` within a group and `2/n` across groups, both capped at 1.
pub fn default_sbm_probs(n: usize) -> (f64, f64) {
    ((20.0 / n as f64).min(1.0), (2.0 / n as f64).min(1.0))
}

/// Samples a directed stochastic block model: each off-diagonal entry is an
/// independent Bernoulli draw with probability `p_in` when the two nodes
/// share a group and `p_out` otherwise.
pub fn gen_sbm(
    memberships: &GroupAssignment,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<NetworkLayer> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("{} = {} is not a probability", name, p)));
        }
    }
    let n = memberships.n_nodes();
    let mut rng = rng_from_seed(seed);
    let mut adjacency = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = if memberships.label(i) == memberships.label(j) { p_in } else { p_out };
            if rng.gen_bool(p) {
                adjacency[(i, j)] = 1.0;
            }
        }
    }
    row_normalize(adjacency)
}

/// Default exponent and degree multiplier for [`gen_powerlaw`].
pub const POWERLAW_DEFAULT_EXPONENT: f64 = 2.5;
pub const POWERLAW_DEFAULT_MULTIPLIER: usize = 4;

/// Draws `n` raw degrees from the truncated power law
/// `P(d = k) ~ k^(-exponent)` on `1..=k_max`.
pub fn sample_powerlaw_degrees(
    n: usize,
    exponent: f64,
    k_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if k_max == 0 {
        return Err(Error::Validation("k_max must be at least 1".into()));
    }
    if !exponent.is_finite() || exponent <= 0.0 {
        return Err(Error::Validation(format!("power-law exponent {} must be positive", exponent)));
    }
    let mut cdf = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    for k in 1..=k_max {
        acc += (k as f64).powf(-exponent);
        cdf.push(acc);
    }
    let total = acc;
    let degrees = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * total;
            // First k with cdf[k-1] >= u.
            match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                Ok(pos) | Err(pos) => (pos + 1).min(k_max),
            }
        })
        .collect();
    Ok(degrees)
}

/// Exact mean of the truncated power law on `1..=k_max`.
pub fn powerlaw_mean(exponent: f64, k_max: usize) -> f64 {
    let weight: f64 = (1..=k_max).map(|k| (k as f64).powf(-exponent)).sum();
    (1..=k_max).map(|k| k as f64 * (k as f64).powf(-exponent)).sum::<f64>() / weight
}

/// Samples a scale-free follower network. Each node `i` draws a raw degree
/// `d` from the truncated power law, is assigned `min(multiplier * d, n - 1)`
/// distinct followers chosen uniformly among the other nodes, and every
/// follower `j` receives the edge `a_ji = 1`. Column sums of the adjacency
/// therefore equal the capped degrees.
pub fn gen_powerlaw(
    n: usize,
    exponent: f64,
    k_max: usize,
    multiplier: usize,
    seed: u64,
) -> Result<NetworkLayer> {
    if n < 2 {
        return Err(Error::Validation("power-law network needs at least 2 nodes".into()));
    }
    let mut rng = rng_from_seed(seed);
    let raw = sample_powerlaw_degrees(n, exponent, k_max, &mut rng)?;
    let mut adjacency = DMatrix::zeros(n, n);
    let mut pool: Vec<usize> = Vec::with_capacity(n - 1);
    for (i, &d) in raw.iter().enumerate() {
        let followers = (multiplier * d).min(n - 1);
        pool.clear();
        pool.extend((0..n).filter(|&j| j != i));
        // Partial Fisher-Yates: the first `followers` slots end up holding a
        // uniform sample without replacement.
        for s in 0..followers {
            let pick = rng.gen_range(s..pool.len());
            pool.swap(s, pick);
            adjacency[(pool[s], i)] = 1.0;
        }
    }
    row_normalize(adjacency)
}

/// Node-to-group assignment for one mode, with labels in `0..group_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    group_count: usize,
}

impl GroupAssignment {
    /// Builds an assignment, checking every label lies in `0..group_count`.
    pub fn new(labels: Vec<usize>, group_count: usize) -> Result<Self> {
        if group_count == 0 {
            return Err(Error::Validation("group count must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::Validation("assignment needs at least one node".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= group_count) {
            return Err(Error::Validation(format!(
                "label {} out of range for {} groups",
                bad, group_count
            )));
        }
        Ok(Self { labels, group_count })
    }

    /// All nodes in one group (trivial single-group assignment).
    pub fn single_group(n: usize) -> Self {
        Self { labels: vec![0; n], group_count: 1 }
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Label of one node.
    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    /// Labels of all nodes.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of member nodes per group.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.group_count];
        for &g in &self.labels {
            counts[g] += 1;
        }
        counts
    }

    /// Member nodes of each group, in increasing node order.
    pub fn group_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.group_count];
        for (i, &g) in self.labels.iter().enumerate() {
            sets[g].push(i);
        }
        sets
    }

    /// Groups without any member node.
    pub fn empty_groups(&self) -> Vec<usize> {
        self.counts().iter().enumerate().filter(|(_, &c)| c == 0).map(|(g, _)| g).collect()
    }
}

/// Samples i.i.d. group labels. `probs` gives one probability per group and
/// must sum to 1; pass `None` for the uniform distribution.
pub fn sample_memberships(
    n: usize,
    group_count: usize,
    probs: Option<&[f64]>,
    seed: u64,
) -> Result<GroupAssignment> {
    if group_count == 0 {
        return Err(Error::Validation("group count must be at least 1".into()));
    }
    let uniform = vec![1.0 / group_count as f64; group_count];
    let probs = probs.unwrap_or(&uniform);
    if probs.len() != group_count {
        return Err(Error::Shape(format!(
            "{} probabilities for {} groups",
            probs.len(),
            group_count
        )));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Validation("group probabilities must lie in [0, 1]".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Validation(format!("group probabilities sum to {}, expected 1", total)));
    }

    let mut rng = rng_from_seed(seed);
    let labels = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (g, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return g;
                }
            }
            group_count - 1
        })
        .collect();
    GroupAssignment::new(labels, group_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_normalize_divides_by_out_degree() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, 1.0, 1.0, //
                0.0, 0.0, 0.0, //
                1.0, 1.0, 0.0,
            ],
        );
        let layer = row_normalize(a).unwrap();
        assert_eq!(layer.out_degrees(), &[2, 0, 2]);
        assert_eq!(layer.isolated_nodes(), &[1]);
        assert_eq!(layer.weights()[(0, 1)], 0.5);
        assert_eq!(layer.weights()[(0, 2)], 0.5);
        // The zero row stays zero rather than becoming NaN.
        assert!(layer.weights().row(1).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn row_normalize_rejects_malformed_adjacency() {
        let nonbinary = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 1.0, 0.0]);
        assert!(row_normalize(nonbinary).is_err());
        let self_loop = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(row_normalize(self_loop).is_err());
        let rect = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(row_normalize(rect).is_err());
    }

    #[test]
    fn weight_rows_sum_to_one_or_zero() {
        let g = sample_memberships(80, 3, None, 11).unwrap();
        let (p_in, p_out) = default_sbm_probs(80);
        let layer = gen_sbm(&g, p_in, p_out, 12).unwrap();
        for i in 0..layer.n() {
            let s: f64 = layer.weights().row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12 || s == 0.0, "row {} sums to {}", i, s);
        }
    }

    #[test]
    fn sbm_edge_rates_match_probabilities() {
        // Monte Carlo check over 40 seeds: empirical in-group and cross-group
        // edge rates stay within three standard errors of the probabilities.
        let n = 120;
        let g = sample_memberships(n, 3, None, 5).unwrap();
        let (p_in, p_out) = default_sbm_probs(n);
        let seeds = 40u64;
        let (mut edges_in, mut pairs_in, mut edges_out, mut pairs_out) = (0u64, 0u64, 0u64, 0u64);
        for seed in 0..seeds {
            let layer = gen_sbm(&g, p_in, p_out, 100 + seed).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let same = g.label(i) == g.label(j);
                    let edge = layer.adjacency()[(i, j)] == 1.0;
                    if same {
                        pairs_in += 1;
                        edges_in += edge as u64;
                    } else {
                        pairs_out += 1;
                        edges_out += edge as u64;
                    }
                }
            }
        }
        for (edges, pairs, p) in [(edges_in, pairs_in, p_in), (edges_out, pairs_out, p_out)] {
            let rate = edges as f64 / pairs as f64;
            let se = (p * (1.0 - p) / pairs as f64).sqrt();
            assert!((rate - p).abs() <= 3.0 * se, "rate {} vs p {} (se {})", rate, p, se);
        }
    }

    #[test]
    fn sbm_is_deterministic_in_the_seed() {
        let g = sample_memberships(40, 2, None, 1).unwrap();
        let a = gen_sbm(&g, 0.3, 0.05, 9).unwrap();
        let b = gen_sbm(&g, 0.3, 0.05, 9).unwrap();
        let c = gen_sbm(&g, 0.3, 0.05, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.adjacency(), c.adjacency());
    }

    #[test]
    fn powerlaw_degrees_match_truncated_mean() {
        let (n, exponent, k_max) = (200, 2.5, 10);
        let mean = powerlaw_mean(exponent, k_max);
        let second: f64 = {
            let weight: f64 = (1..=k_max).map(|k| (k as f64).powf(-exponent)).sum();
            (1..=k_max).map(|k| (k as f64).powi(2) * (k as f64).powf(-exponent)).sum::<f64>()
                / weight
        };
        let var = second - mean * mean;
        let draws = 50 * n;
        let mut total = 0usize;
        for seed in 0..50 {
            let mut rng = rng_from_seed(seed);
            total += sample_powerlaw_degrees(n, exponent, k_max, &mut rng).unwrap().iter().sum::<usize>();
        }
        let empirical = total as f64 / draws as f64;
        let se = (var / draws as f64).sqrt();
        assert!(
            (empirical - mean).abs() <= 3.0 * se,
            "empirical mean {} vs exact {} (se {})",
            empirical,
            mean,
            se
        );
    }

    #[test]
    fn powerlaw_in_degrees_equal_capped_draws() {
        let (n, exponent, k_max, multiplier, seed) = (60, 2.5, 10, 4, 77);
        let layer = gen_powerlaw(n, exponent, k_max, multiplier, seed).unwrap();
        // The generator draws the raw degrees first from the seed's stream,
        // so redrawing them reproduces the capped in-degrees exactly.
        let mut rng = rng_from_seed(seed);
        let raw = sample_powerlaw_degrees(n, exponent, k_max, &mut rng).unwrap();
        for i in 0..n {
            let expected = (multiplier * raw[i]).min(n - 1);
            let in_degree: f64 = layer.adjacency().column(i).sum();
            assert_eq!(in_degree as usize, expected, "node {}", i);
        }
        for i in 0..n {
            assert_eq!(layer.adjacency()[(i, i)], 0.0);
        }
    }

    #[test]
    fn membership_proportions_are_near_uniform() {
        let n = 3000;
        let g = sample_memberships(n, 3, None, 42).unwrap();
        let se = (1.0 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
        for count in g.counts() {
            let share = count as f64 / n as f64;
            assert!((share - 1.0 / 3.0).abs() <= 3.0 * se, "share {}", share);
        }
    }

    #[test]
    fn memberships_follow_explicit_probabilities() {
        let n = 4000;
        let g = sample_memberships(n, 2, Some(&[0.8, 0.2]), 7).unwrap();
        let share = g.counts()[0] as f64 / n as f64;
        let se = (0.8 * 0.2 / n as f64).sqrt();
        assert!((share - 0.8).abs() <= 3.0 * se);
        assert!(sample_memberships(n, 2, Some(&[0.8, 0.1]), 7).is_err());
        assert!(sample_memberships(n, 2, Some(&[0.8]), 7).is_err());
    }

    #[test]
    fn group_assignment_bookkeeping() {
        let g = GroupAssignment::new(vec![0, 2, 0, 1], 4).unwrap();
        assert_eq!(g.counts(), vec![2, 1, 1, 0]);
        assert_eq!(g.group_sets()[0], vec![0, 2]);
        assert_eq!(g.empty_groups(), vec![3]);
        assert!(GroupAssignment::new(vec![0, 3], 3).is_err());
        assert!(GroupAssignment::new(vec![], 2).is_err());
    }
}
