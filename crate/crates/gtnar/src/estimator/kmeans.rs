//! Small Lloyd k-means used by the initialization heuristics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Clusters `n` points of dimension `dim` (stored row-major) into `k`
/// groups. Centers are seeded with the k-means++ rule, empty clusters are
/// re-seeded to the point farthest from its center, and assignment ties go
/// to the smallest cluster index.
pub(crate) fn kmeans(
    points: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
) -> Vec<usize> {
    debug_assert_eq!(points.len(), n * dim);
    if k <= 1 || n == 0 || dim == 0 {
        return vec![0; n];
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    // k-means++ seeding.
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.gen_range(0..n)));
    let mut nearest = vec![f64::INFINITY; n];
    while centers.len() < k * dim {
        let last = &centers[centers.len() - dim..];
        let mut total = 0.0;
        for i in 0..n {
            let d = dist2(point(i), last);
            if d < nearest[i] {
                nearest[i] = d;
            }
            total += nearest[i];
        }
        let pick = if total > 0.0 {
            let mut u: f64 = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.extend_from_slice(point(pick));
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        // Assignment step.
        let mut moved = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = dist2(point(i), &centers[..dim]);
            for c in 1..k {
                let d = dist2(point(i), &centers[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                moved = true;
            }
        }
        // Update step.
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k * dim];
        for i in 0..n {
            counts[labels[i]] += 1;
            for d in 0..dim {
                sums[labels[i] * dim + d] += points[i * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster to the worst-fitted point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(point(a), &centers[labels[a] * dim..(labels[a] + 1) * dim]);
                        let db = dist2(point(b), &centers[labels[b] * dim..(labels[b] + 1) * dim]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap_or(0);
                centers[c * dim..(c + 1) * dim].copy_from_slice(point(far));
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    labels
}
