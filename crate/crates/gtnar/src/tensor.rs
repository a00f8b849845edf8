//! Dense q-way tensor algebra.
//!
//! Storage follows the vectorization convention used throughout the crate:
//! the first index varies fastest, so a tensor with dimensions
//! `(N_1, ..., N_q)` stores entry `(i_1, ..., i_q)` at linear position
//! `i_1 + N_1 * (i_2 + N_2 * (i_3 + ...))`. All indices are zero based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense tensor of order `q >= 1` with finite real entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor from its dimensions and vectorized entries
    /// (first index fastest).
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let expected = element_count(&dims)?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor with dims {:?} needs {} entries, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    /// Zero tensor with the given dimensions.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let n = element_count(&dims)?;
        Ok(Self { dims, data: vec![0.0; n] })
    }

    /// Rebuilds a tensor from a vectorized slice; inverse of [`DenseTensor::vectorize`].
    pub fn unvectorize(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, data)
    }

    /// Tensor order `q`.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Dimensions `(N_1, ..., N_q)`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor has no entries (never holds for a valid tensor).
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Vectorized entries with the first index varying fastest.
    pub fn vectorize(&self) -> &[f64] {
        &self.data
    }

    /// Consumes the tensor and returns its vectorized entries.
    pub fn into_vectorized(self) -> Vec<f64> {
        self.data
    }

    /// Linear position of a multi-index.
    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "index of length {} for order-{} tensor",
                index.len(),
                self.dims.len()
            )));
        }
        let mut pos = 0;
        let mut stride = 1;
        for (d, (&i, &n)) in index.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return Err(Error::Validation(format!(
                    "index {} out of range for dimension {} of extent {}",
                    i, d, n
                )));
            }
            pos += i * stride;
            stride *= n;
        }
        Ok(pos)
    }

    /// Entry at a multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(index)?])
    }

    /// Overwrites the entry at a multi-index.
    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Validation("tensor entries must be finite".into()));
        }
        let pos = self.linear_index(index)?;
        self.data[pos] = value;
        Ok(())
    }

    /// Mode-`mode` product with a matrix: contracts index `i_mode` against the
    /// columns of `matrix`, so the result has `matrix.nrows()` entries along
    /// that mode and entry
    /// `sum_k matrix[(s, k)] * self[(i_1, ..., k, ..., i_q)]` at position `s`.
    pub fn mode_multiply(&self, matrix: &DMatrix<f64>, mode: usize) -> Result<Self> {
        let q = self.dims.len();
        if mode >= q {
            return Err(Error::Shape(format!("mode {} out of range for order {}", mode, q)));
        }
        let n_old = self.dims[mode];
        if matrix.ncols() != n_old {
            return Err(Error::Shape(format!(
                "matrix with {} columns cannot contract mode {} of extent {}",
                matrix.ncols(),
                mode,
                n_old
            )));
        }
        let n_new = matrix.nrows();
        let inner: usize = self.dims[..mode].iter().product();
        let outer: usize = self.dims[mode + 1..].iter().product();

        let mut dims = self.dims.clone();
        dims[mode] = n_new;
        let mut data = vec![0.0; inner * n_new * outer];

        // Contiguous inner blocks keep the accumulation cache friendly.
        for o in 0..outer {
            let src_base = o * inner * n_old;
            let dst_base = o * inner * n_new;
            for s in 0..n_new {
                let dst = &mut data[dst_base + s * inner..dst_base + (s + 1) * inner];
                for k in 0..n_old {
                    let w = matrix[(s, k)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = &self.data[src_base + k * inner..src_base + (k + 1) * inner];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d += w * x;
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    /// Entrywise (Hadamard) product of two tensors with equal dimensions.
    pub fn elementwise_product(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "elementwise product needs equal dims, got {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Self::new(self.dims.clone(), data)
    }

    /// Outer product of `q` vectors: entry `(i_1, ..., i_q)` equals
    /// `v_1[i_1] * ... * v_q[i_q]`.
    pub fn outer_product(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Shape("outer product needs at least one vector".into()));
        }
        let dims: Vec<usize> = vectors.iter().map(Vec::len).collect();
        validate_dims(&dims)?;
        // Appending a mode multiplies the existing block by each new entry in
        // turn, which reproduces the first-index-fastest layout directly.
        let mut data = vec![1.0];
        for v in vectors {
            let block = data;
            let mut grown = Vec::with_capacity(block.len() * v.len());
            for &w in v {
                grown.extend(block.iter().map(|&x| x * w));
            }
            data = grown;
        }
        Self::new(dims, data)
    }

    /// Restriction of the tensor to a cartesian product of index sets.
    pub fn subset(&self, subset: &IndexSubset) -> Result<Self> {
        if subset.sets.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "subset of order {} applied to order-{} tensor",
                subset.sets.len(),
                self.dims.len()
            )));
        }
        for (d, (set, &n)) in subset.sets.iter().zip(&self.dims).enumerate() {
            if let Some(&bad) = set.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!(
                    "subset index {} out of range for dimension {} of extent {}",
                    bad, d, n
                )));
            }
        }
        let dims: Vec<usize> = subset.sets.iter().map(Vec::len).collect();
        let n_out = element_count(&dims)?;
        let strides = strides(&self.dims);

        let mut data = Vec::with_capacity(n_out);
        let mut counter = vec![0usize; dims.len()];
        for _ in 0..n_out {
            let mut pos = 0;
            for (d, &c) in counter.iter().enumerate() {
                pos += subset.sets[d][c] * strides[d];
            }
            data.push(self.data[pos]);
            advance(&mut counter, &dims);
        }
        Self::new(dims, data)
    }
}

/// Cartesian product of per-mode index sets, each strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSubset {
    sets: Vec<Vec<usize>>,
}

impl IndexSubset {
    /// Builds a subset from per-mode index sets; each must be non-empty and
    /// strictly increasing.
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Shape("index subset needs at least one mode".into()));
        }
        for (d, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Validation(format!("empty index set for dimension {}", d)));
            }
            if !set.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Validation(format!(
                    "index set for dimension {} must be strictly increasing",
                    d
                )));
            }
        }
        Ok(Self { sets })
    }

    /// Subset selecting every index of every mode.
    pub fn full(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Self::new(dims.iter().map(|&n| (0..n).collect()).collect())
    }

    /// Per-mode index sets.
    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

/// Strides of the first-index-fastest layout.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(dims.len());
    let mut acc = 1;
    for &n in dims {
        s.push(acc);
        acc *= n;
    }
    s
}

/// Advances a multi-index odometer (first index fastest); wraps to zero at the end.
pub fn advance(counter: &mut [usize], dims: &[usize]) {
    for (c, &n) in counter.iter_mut().zip(dims) {
        *c += 1;
        if *c < n {
            return;
        }
        *c = 0;
    }
}

pub(crate) fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::Shape("tensor order must be at least 1".into()));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::Shape(format!("all extents must be positive, got {:?}", dims)));
    }
    Ok(())
}

pub(crate) fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &n| {
        acc.checked_mul(n)
            .ok_or_else(|| Error::Shape(format!("element count overflows for dims {:?}", dims)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn counting_tensor(dims: &[usize]) -> DenseTensor {
        let n: usize = dims.iter().product();
        DenseTensor::new(dims.to_vec(), (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn vectorize_runs_first_index_fastest() {
        // Entry (i, j) holds (i + 1) + 2 * j, so walking the first index
        // fastest yields 1, 2, 3, 4.
        let mut t = DenseTensor::zeros(vec![2, 2]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                t.set(&[i, j], (i + 1) as f64 + 2.0 * j as f64).unwrap();
            }
        }
        assert_eq!(t.vectorize(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn linear_index_matches_stride_formula() {
        let t = counting_tensor(&[2, 3, 2]);
        assert_eq!(t.linear_index(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(t.linear_index(&[1, 0, 0]).unwrap(), 1);
        assert_eq!(t.linear_index(&[0, 1, 0]).unwrap(), 2);
        assert_eq!(t.linear_index(&[0, 0, 1]).unwrap(), 6);
        assert_eq!(t.linear_index(&[1, 2, 1]).unwrap(), 11);
        assert_eq!(t.get(&[1, 2, 1]).unwrap(), 12.0);
    }

    #[test]
    fn unvectorize_inverts_vectorize() {
        let t = counting_tensor(&[3, 2, 2]);
        let back = DenseTensor::unvectorize(vec![3, 2, 2], t.vectorize().to_vec()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mode_multiply_small_case_by_hand() {
        // x is 2x2 with columns (1, 2) and (3, 4); m = [[1, 2], [0, 1]].
        // Contracting mode 0: out(s, j) = sum_k m(s, k) x(k, j).
        let x = counting_tensor(&[2, 2]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let y = x.mode_multiply(&m, 0).unwrap();
        assert_eq!(y.vectorize(), &[5.0, 2.0, 11.0, 4.0]);

        // Contracting mode 1 of the same tensor.
        let z = x.mode_multiply(&m, 1).unwrap();
        assert_eq!(z.vectorize(), &[7.0, 10.0, 3.0, 4.0]);
    }

    #[test]
    fn mode_multiply_with_identity_is_noop() {
        let x = counting_tensor(&[2, 3, 2]);
        for mode in 0..3 {
            let id = DMatrix::identity(x.dims()[mode], x.dims()[mode]);
            assert_eq!(x.mode_multiply(&id, mode).unwrap(), x);
        }
    }

    #[test]
    fn mode_multiply_can_change_the_extent() {
        let x = counting_tensor(&[2, 2]);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = x.mode_multiply(&m, 0).unwrap();
        assert_eq!(y.dims(), &[3, 2]);
        assert_eq!(y.vectorize(), &[1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
    }

    /// Independent reference contraction written index by index.
    fn mode_multiply_naive(x: &DenseTensor, m: &DMatrix<f64>, mode: usize) -> DenseTensor {
        let mut dims = x.dims().to_vec();
        dims[mode] = m.nrows();
        let mut out = DenseTensor::zeros(dims.clone()).unwrap();
        let mut idx = vec![0usize; dims.len()];
        let total: usize = dims.iter().product();
        for _ in 0..total {
            let mut acc = 0.0;
            let mut src = idx.clone();
            for k in 0..x.dims()[mode] {
                src[mode] = k;
                acc += m[(idx[mode], k)] * x.get(&src).unwrap();
            }
            out.set(&idx, acc).unwrap();
            advance(&mut idx, &dims);
        }
        out
    }

    #[test]
    fn mode_multiply_matches_naive_contraction() {
        let mut rng_state = 42u64;
        let mut next = move || {
            // Small LCG keeps this oracle free of the crate's own RNG helpers.
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for dims in [vec![2, 3], vec![4, 3, 2], vec![2, 2, 3, 2]] {
            let n: usize = dims.iter().product();
            let x = DenseTensor::new(dims.clone(), (0..n).map(|_| next()).collect()).unwrap();
            for mode in 0..dims.len() {
                let rows = dims[mode] + 1;
                let m = DMatrix::from_fn(rows, dims[mode], |_, _| next());
                let fast = x.mode_multiply(&m, mode).unwrap();
                let slow = mode_multiply_naive(&x, &m, mode);
                for (a, b) in fast.vectorize().iter().zip(slow.vectorize()) {
                    assert_relative_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn elementwise_product_multiplies_entrywise() {
        let a = counting_tensor(&[2, 2]);
        let b = DenseTensor::new(vec![2, 2], vec![2.0, 0.5, -1.0, 3.0]).unwrap();
        let c = a.elementwise_product(&b).unwrap();
        assert_eq!(c.vectorize(), &[2.0, 1.0, -3.0, 12.0]);
    }

    #[test]
    fn outer_product_of_two_vectors() {
        let t = DenseTensor::outer_product(&[vec![1.0, 2.0], vec![3.0, 5.0, 7.0]]).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert_eq!(t.get(&[1, 2]).unwrap(), 14.0);
        assert_eq!(t.vectorize(), &[3.0, 6.0, 5.0, 10.0, 7.0, 14.0]);
    }

    #[test]
    fn outer_product_with_ones_broadcasts() {
        // A covariate effect enters the model as 1 o beta o 1; check that the
        // middle vector is copied across the other modes.
        let t = DenseTensor::outer_product(&[vec![1.0; 2], vec![4.0, -2.0], vec![1.0; 2]]).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(t.get(&[i, 0, k]).unwrap(), 4.0);
                assert_eq!(t.get(&[i, 1, k]).unwrap(), -2.0);
            }
        }
    }

    #[test]
    fn subset_restricts_each_mode() {
        let t = counting_tensor(&[3, 3]);
        let s = IndexSubset::new(vec![vec![0, 2], vec![1]]).unwrap();
        let r = t.subset(&s).unwrap();
        assert_eq!(r.dims(), &[2, 1]);
        assert_eq!(r.vectorize(), &[4.0, 6.0]);
    }

    #[test]
    fn subset_with_all_indices_is_identity() {
        let t = counting_tensor(&[2, 3, 2]);
        let s = IndexSubset::full(t.dims()).unwrap();
        assert_eq!(t.subset(&s).unwrap(), t);
    }

    #[test]
    fn invalid_construction_is_rejected() {
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(DenseTensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn misuse_of_operations_is_rejected() {
        let t = counting_tensor(&[2, 2]);
        let m = DMatrix::identity(3, 3);
        assert!(t.mode_multiply(&m, 0).is_err());
        assert!(t.mode_multiply(&DMatrix::identity(2, 2), 2).is_err());
        assert!(t.elementwise_product(&counting_tensor(&[2, 3])).is_err());
        assert!(t.get(&[2, 0]).is_err());
        assert!(t.get(&[0]).is_err());
        assert!(IndexSubset::new(vec![vec![1, 0]]).is_err());
        assert!(IndexSubset::new(vec![vec![]]).is_err());
        let s = IndexSubset::new(vec![vec![0], vec![3]]).unwrap();
        assert!(t.subset(&s).is_err());
    }
}
