//! Symmetric positive semi-definite factorization with pivot diagnostics.
//!
//! The normal system of the least-squares step is symmetric and positive
//! semi-definite by construction, so an LDL^T factorization solves it without
//! pivoting. The diagonal of `D` is kept for diagnostics: a vanishing or tiny
//! pivot identifies exactly which coefficient block of the system carries no
//! information, which produces far better error messages than a generic
//! "matrix is singular".

use nalgebra::DMatrix;

/// Factored form `A = L D L^T` with unit lower-triangular `L`.
pub(crate) struct LdltFactor {
    l: DMatrix<f64>,
    d: Vec<f64>,
}

/// Why a factorization was rejected.
pub(crate) struct Degenerate {
    /// Coordinate of the offending pivot.
    pub index: usize,
    /// Ratio of smallest to largest pivot magnitude (0 for an exact zero).
    pub rcond: f64,
}

/// Smallest acceptable pivot ratio; systems below this are reported singular.
pub(crate) const RCOND_MIN: f64 = 1e-12;

impl LdltFactor {
    /// Factors a symmetric matrix, rejecting pivots whose magnitude falls
    /// below `RCOND_MIN` times the largest pivot seen.
    pub(crate) fn new(a: &DMatrix<f64>) -> Result<Self, Degenerate> {
        let k = a.nrows();
        assert_eq!(k, a.ncols(), "matrix must be square");
        let mut l = DMatrix::identity(k, k);
        let mut d = vec![0.0; k];
        let mut max_abs = 0.0f64;
        let mut min_abs = f64::INFINITY;
        let mut min_index = 0;
        for j in 0..k {
            let mut dj = a[(j, j)];
            for s in 0..j {
                dj -= l[(j, s)] * l[(j, s)] * d[s];
            }
            d[j] = dj;
            if dj.abs() > max_abs {
                max_abs = dj.abs();
            }
            if dj.abs() < min_abs {
                min_abs = dj.abs();
                min_index = j;
            }
            if dj.abs() <= RCOND_MIN * max_abs || dj == 0.0 {
                let rcond = if max_abs == 0.0 { 0.0 } else { dj.abs() / max_abs };
                return Err(Degenerate { index: min_index, rcond });
            }
            for i in j + 1..k {
                let mut v = a[(i, j)];
                for s in 0..j {
                    v -= l[(i, s)] * l[(j, s)] * d[s];
                }
                l[(i, j)] = v / dj;
            }
        }
        Ok(Self { l, d })
    }

    /// Solves `A x = rhs`.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.d.len();
        debug_assert_eq!(rhs.len(), k);
        let mut x = rhs.to_vec();
        // Forward: L z = rhs.
        for i in 0..k {
            for j in 0..i {
                x[i] -= self.l[(i, j)] * x[j];
            }
        }
        // Diagonal and backward: L^T x = D^-1 z.
        for i in 0..k {
            x[i] /= self.d[i];
        }
        for i in (0..k).rev() {
            for j in i + 1..k {
                x[i] -= self.l[(j, i)] * x[j];
            }
        }
        x
    }

    /// Dense inverse, column by column.
    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let k = self.d.len();
        let mut inv = DMatrix::zeros(k, k);
        let mut e = vec![0.0; k];
        for j in 0..k {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..k {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_spd(k: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        let mut next = move || {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let b = DMatrix::from_fn(k, k, |_, _| next());
        &b * b.transpose() + DMatrix::identity(k, k) * 0.5
    }

    #[test]
    fn solve_matches_lu_oracle() {
        for k in [1, 3, 7, 20] {
            let a = random_spd(k, k as u64);
            let rhs: Vec<f64> = (0..k).map(|i| (i as f64 * 0.7).sin()).collect();
            let factor = LdltFactor::new(&a).unwrap_or_else(|_| panic!("spd must factor"));
            let x = factor.solve(&rhs);
            let oracle = a
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_vec(rhs.clone()))
                .expect("lu solve");
            for i in 0..k {
                assert_relative_eq!(x[i], oracle[i], epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn inverse_matches_identity() {
        let a = random_spd(6, 9);
        let inv = LdltFactor::new(&a).unwrap_or_else(|_| panic!("spd must factor")).inverse();
        let prod = &a * &inv;
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[(i, j)], expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_pivot_is_reported_with_its_coordinate() {
        let mut a = random_spd(4, 2);
        // Zero out the third row and column: that coordinate carries nothing.
        for i in 0..4 {
            a[(2, i)] = 0.0;
            a[(i, 2)] = 0.0;
        }
        match LdltFactor::new(&a) {
            Err(Degenerate { index, rcond }) => {
                assert_eq!(index, 2);
                assert_eq!(rcond, 0.0);
            }
            Ok(_) => panic!("expected a degenerate factorization"),
        }
    }
}
