//! Gaussian RBF basis functions and cached design-matrix columns.
//!
//! Every training sample anchors one basis function
//! `phi_j(x) = exp(-theta * ||x - x_j||^2)`, so the candidate pool is as
//! large as the training set. Columns are computed lazily and cached by
//! sample index; the full N x N Gram matrix only materializes if every
//! candidate column actually gets touched (which the incremental trainer
//! does on its first scan, making later scans cache-warm).

use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{IsborError, Result};

/// RBF width parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub theta: f64,
}

impl KernelConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(IsborError::input(format!(
                "kernel width theta must be a positive finite real, got {theta}"
            )));
        }
        Ok(KernelConfig { theta })
    }
}

/// `exp(-theta * ||x - z||^2)`.
///
/// The squared distance is evaluated as `||x||^2 + ||z||^2 - 2 x.z`, clamped
/// at zero so round-off can never produce a value above 1.
pub fn rbf(x: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>, theta: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(IsborError::input(format!(
            "rbf dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    if !theta.is_finite() {
        return Err(IsborError::input(format!("rbf theta must be finite, got {theta}")));
    }
    let (mut xx, mut zz, mut xz) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(z.iter()) {
        xx += a * a;
        zz += b * b;
        xz += a * b;
    }
    let d2 = (xx + zz - 2.0 * xz).max(0.0);
    Ok((-theta * d2).exp())
}

fn squared_distance(x: &[f64], x_norm: f64, z: &[f64], z_norm: f64) -> f64 {
    let mut xz = 0.0;
    for (a, b) in x.iter().zip(z.iter()) {
        xz += a * b;
    }
    (x_norm + z_norm - 2.0 * xz).max(0.0)
}

/// Design matrix restricted to the active basis set: column `j` holds
/// `phi_{index[j]}` evaluated at every training sample.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// N x M matrix of basis values.
    pub columns: Array2<f64>,
    /// Training-sample index anchoring each column.
    pub column_index: Vec<usize>,
    /// Sample count N.
    pub n: usize,
}

impl DesignMatrix {
    pub fn m(&self) -> usize {
        self.column_index.len()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.columns.view()
    }
}

/// Lazily computed, concurrently fillable store of basis columns over one
/// training set. Columns are immutable once computed, so shared references
/// can be handed out freely across threads.
pub struct ColumnCache {
    x: Array2<f64>,
    theta: f64,
    sq_norms: Vec<f64>,
    cols: Vec<OnceLock<Arc<[f64]>>>,
    gram: OnceLock<Option<Arc<Array2<f64>>>>,
}

/// Ceiling on the dense Gram matrix; above this the candidate scan falls
/// back to cached per-column dot products.
const GRAM_BYTES_LIMIT: usize = 2_000_000_000;

impl ColumnCache {
    pub fn new(x: &Array2<f64>, config: KernelConfig) -> Self {
        let n = x.nrows();
        let sq_norms = (0..n)
            .map(|i| x.row(i).iter().map(|v| v * v).sum())
            .collect();
        let mut cols = Vec::with_capacity(n);
        cols.resize_with(n, OnceLock::new);
        ColumnCache {
            x: x.clone(),
            theta: config.theta,
            sq_norms,
            cols,
            gram: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    /// Basis column `j`: entry `i` is `rbf(x_i, x_j, theta)`. Computed on
    /// first use, then served from the cache.
    pub fn column(&self, j: usize) -> Result<Arc<[f64]>> {
        let n = self.n();
        if j >= n {
            return Err(IsborError::input(format!(
                "design column index {j} out of range for {n} samples"
            )));
        }
        let col = self.cols[j].get_or_init(|| {
            let xj: Vec<f64> = self.x.row(j).to_vec();
            let nj = self.sq_norms[j];
            let theta = self.theta;
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let xi = self.x.row(i);
                let d2 = squared_distance(
                    xi.to_slice().expect("row is contiguous"),
                    self.sq_norms[i],
                    &xj,
                    nj,
                );
                out.push((-theta * d2).exp());
            }
            out.into()
        });
        Ok(Arc::clone(col))
    }

    /// Force every column into the cache (the "warm" state used when
    /// benchmarking per-iteration cost), including the dense Gram when it
    /// fits the memory budget.
    pub fn warm_all(&self) -> Result<()> {
        use rayon::prelude::*;
        (0..self.n())
            .into_par_iter()
            .try_for_each(|j| self.column(j).map(|_| ()))?;
        self.gram();
        Ok(())
    }

    /// Dense symmetric Gram matrix with row `j` equal to basis column `j`.
    /// Materialized once on first request; `None` when N^2 would blow the
    /// memory budget.
    pub fn gram(&self) -> Option<Arc<Array2<f64>>> {
        let n = self.n();
        self.gram
            .get_or_init(|| {
                if n.saturating_mul(n).saturating_mul(8) > GRAM_BYTES_LIMIT {
                    return None;
                }
                let mut g = Array2::<f64>::zeros((n, n));
                for j in 0..n {
                    let col = self.column(j).expect("index in range");
                    g.row_mut(j)
                        .assign(&ndarray::ArrayView1::from_shape(n, &col).expect("length n"));
                }
                Some(Arc::new(g))
            })
            .clone()
    }
}

/// Basis column as an owned array (convenience wrapper over the cache).
pub fn design_column(cache: &ColumnCache, j: usize) -> Result<Array1<f64>> {
    Ok(Array1::from_iter(cache.column(j)?.iter().copied()))
}

/// Assemble the active design matrix, one column per active index, order
/// preserved.
pub fn active_design(cache: &ColumnCache, active_indices: &[usize]) -> Result<DesignMatrix> {
    let n = cache.n();
    let m = active_indices.len();
    let mut seen = vec![false; n];
    for &j in active_indices {
        if j >= n {
            return Err(IsborError::input(format!(
                "active index {j} out of range for {n} samples"
            )));
        }
        if seen[j] {
            return Err(IsborError::input(format!("duplicate active index {j}")));
        }
        seen[j] = true;
    }
    let mut columns = Array2::<f64>::zeros((n, m));
    for (c, &j) in active_indices.iter().enumerate() {
        let col = cache.column(j)?;
        for i in 0..n {
            columns[(i, c)] = col[i];
        }
    }
    Ok(DesignMatrix { columns, column_index: active_indices.to_vec(), n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rbf_of_point_with_itself_is_one() {
        let x = array![1.5, -2.0, 3.0];
        for theta in [1e-3, 1.0, 50.0] {
            assert_eq!(rbf(x.view(), x.view(), theta).unwrap(), 1.0);
        }
    }

    #[test]
    fn rbf_matches_direct_formula() {
        let x = array![0.0, 0.0];
        let z = array![1.0, 0.0];
        let v = rbf(x.view(), z.view(), 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rbf_theta_to_zero_limit_is_one() {
        let x = array![3.0, 4.0];
        let z = array![-1.0, 7.0];
        let v = rbf(x.view(), z.view(), 1e-300).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rbf_rejects_dimension_mismatch() {
        let x = array![1.0, 2.0];
        let z = array![1.0];
        assert!(rbf(x.view(), z.view(), 1.0).is_err());
    }

    #[test]
    fn rbf_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x = array![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let z = array![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let theta = rng.gen_range(0.01..5.0);
            let a = rbf(x.view(), z.view(), theta).unwrap();
            let b = rbf(z.view(), x.view(), theta).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a <= 1.0);
        }
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn design_column_self_entry_is_one() {
        let x = random_points(7, 3, 1);
        let cache = ColumnCache::new(&x, KernelConfig::new(0.7).unwrap());
        for j in 0..7 {
            let col = design_column(&cache, j).unwrap();
            assert_eq!(col[j], 1.0);
        }
    }

    #[test]
    fn design_column_two_point_example() {
        let x = array![[0.0], [1.0]];
        let cache = ColumnCache::new(&x, KernelConfig::new(1.0).unwrap());
        let col = design_column(&cache, 0).unwrap();
        assert!((col[0] - 1.0).abs() < 1e-15);
        assert!((col[1] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cached_column_is_bit_identical_on_recompute() {
        let x = random_points(20, 2, 2);
        let cache_a = ColumnCache::new(&x, KernelConfig::new(1.3).unwrap());
        let cache_b = ColumnCache::new(&x, KernelConfig::new(1.3).unwrap());
        let a = cache_a.column(5).unwrap();
        let b = cache_b.column(5).unwrap();
        let again = cache_a.column(5).unwrap();
        assert_eq!(a.as_ref(), b.as_ref());
        assert_eq!(a.as_ref(), again.as_ref());
    }

    #[test]
    fn active_design_empty_and_single() {
        let x = random_points(6, 2, 3);
        let cache = ColumnCache::new(&x, KernelConfig::new(0.5).unwrap());
        let empty = active_design(&cache, &[]).unwrap();
        assert_eq!(empty.columns.shape(), &[6, 0]);
        let single = active_design(&cache, &[3]).unwrap();
        let direct = design_column(&cache, 3).unwrap();
        for i in 0..6 {
            assert_eq!(single.columns[(i, 0)], direct[i]);
        }
    }

    #[test]
    fn active_design_rejects_duplicates() {
        let x = random_points(4, 2, 4);
        let cache = ColumnCache::new(&x, KernelConfig::new(0.5).unwrap());
        assert!(active_design(&cache, &[1, 1]).is_err());
        assert!(active_design(&cache, &[9]).is_err());
    }

    #[test]
    fn full_gram_symmetric_unit_diagonal_and_psd() {
        let n = 20;
        let x = random_points(n, 2, 5);
        let cache = ColumnCache::new(&x, KernelConfig::new(0.8).unwrap());
        let all: Vec<usize> = (0..n).collect();
        let gram = active_design(&cache, &all).unwrap().columns;
        for i in 0..n {
            assert_eq!(gram[(i, i)], 1.0);
            for j in 0..n {
                assert!((gram[(i, j)] - gram[(j, i)]).abs() < 1e-15);
            }
        }
        // PSD check via eigenvalue lower bound: Gram + tiny ridge must admit
        // a Cholesky factorization.
        let mut shifted = gram.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-8;
        }
        assert!(crate::linalg::Cholesky::new(shifted.view()).is_ok());
    }
}
