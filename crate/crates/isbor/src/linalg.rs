//! Small dense symmetric linear algebra: Cholesky with a jitter ladder.
//!
//! The posterior precision `A + Phi^T H Phi` is positive definite in exact
//! arithmetic but can lose definiteness in floating point when some alpha
//! get extremely large. Factorizations therefore retry with a trace-scaled
//! ridge that grows by 10x per attempt before giving up.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{IsborError, Result};

/// Relative size of the first ridge added when a factorization fails.
pub const JITTER_INITIAL: f64 = 1e-10;
/// Relative ridge size beyond which we stop retrying and report failure.
pub const JITTER_MAX: f64 = 1e-4;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
    /// Ridge that had to be added to the diagonal (0.0 in the usual case).
    pub jitter: f64,
}

impl Cholesky {
    /// Factor `a` directly, without jitter. Fails on any non-positive pivot.
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        Self::factor(a, 0.0).ok_or_else(|| {
            IsborError::numeric(format!(
                "Cholesky factorization failed for {}x{} matrix (not positive definite)",
                a.nrows(),
                a.ncols()
            ))
        })
    }

    /// Factor `a`, climbing the jitter ladder on failure: ridge starts at
    /// `JITTER_INITIAL * mean(diag)` and multiplies by 10 up to `JITTER_MAX`.
    pub fn new_with_jitter(a: ArrayView2<'_, f64>) -> Result<Self> {
        if let Some(chol) = Self::factor(a, 0.0) {
            return Ok(chol);
        }
        let m = a.nrows() as f64;
        let trace_scale = (a.diag().sum() / m).abs().max(f64::MIN_POSITIVE);
        let mut rel = JITTER_INITIAL;
        while rel <= JITTER_MAX {
            if let Some(chol) = Self::factor(a, rel * trace_scale) {
                return Ok(chol);
            }
            rel *= 10.0;
        }
        Err(IsborError::numeric(format!(
            "Cholesky factorization failed for {}x{} matrix even with ridge {:.1e} * trace scale",
            a.nrows(),
            a.ncols(),
            JITTER_MAX
        )))
    }

    fn factor(a: ArrayView2<'_, f64>, ridge: f64) -> Option<Self> {
        let m = a.nrows();
        debug_assert_eq!(m, a.ncols());
        let mut l = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..=i {
                let mut sum = a[(i, j)];
                if i == j {
                    sum += ridge;
                }
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[(i, i)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Some(Cholesky { lower: l, jitter: ridge })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.lower.view()
    }

    /// log |A| of the factored matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solve A x = b.
    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let m = self.dim();
        debug_assert_eq!(b.len(), m);
        let l = &self.lower;
        // Forward: L y = b
        let mut y = b.to_owned();
        for i in 0..m {
            let mut v = y[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        // Backward: L^T x = y
        for i in (0..m).rev() {
            let mut v = y[i];
            for k in (i + 1)..m {
                v -= l[(k, i)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        y
    }

    /// Solve L z = b (forward substitution only).
    pub fn solve_lower(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let m = self.dim();
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..m {
            let mut v = y[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        y
    }

    /// Full inverse A^{-1}, column by column.
    pub fn inverse(&self) -> Array2<f64> {
        let m = self.dim();
        let mut inv = Array2::<f64>::zeros((m, m));
        let mut e = Array1::<f64>::zeros(m);
        for j in 0..m {
            e[j] = 1.0;
            let col = self.solve_vec(e.view());
            inv.column_mut(j).assign(&col);
            e[j] = 0.0;
        }
        // Symmetrize to wash out round-off asymmetry.
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// x^T M x for a symmetric matrix `m`.
pub fn quadratic_form(m: ArrayView2<'_, f64>, x: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let row = m.row(i);
        let mut s = 0.0;
        for j in 0..m.ncols() {
            s += row[j] * x[j];
        }
        acc += x[i] * s;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.2], [0.6, 1.2, 3.0]];
        let chol = Cholesky::new(a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = chol.solve_vec(b.view());
        let back = a.dot(&x);
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_det_matches_direct_product() {
        let a = array![[2.0, 0.3], [0.3, 1.5]];
        let chol = Cholesky::new(a.view()).unwrap();
        let det: f64 = 2.0 * 1.5 - 0.3 * 0.3;
        assert!((chol.log_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = array![[3.0, 1.0, 0.2], [1.0, 2.5, -0.4], [0.2, -0.4, 1.8]];
        let inv = Cholesky::new(a.view()).unwrap().inverse();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_ladder_rescues_semidefinite_matrix() {
        // Rank-1 matrix: plain factorization must fail, jittered must work.
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(Cholesky::new(a.view()).is_err());
        let chol = Cholesky::new_with_jitter(a.view()).unwrap();
        assert!(chol.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_fails_even_with_jitter() {
        let a = array![[1.0, 0.0], [0.0, -5.0]];
        assert!(Cholesky::new_with_jitter(a.view()).is_err());
    }
}
