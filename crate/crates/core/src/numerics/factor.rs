//! Cholesky factorization and triangular solves.
//!
//! These back every `K_uu^{-1}` term in the model; explicit inverses are
//! never formed.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Relative tolerance for the symmetry precondition of [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Jitter schedule, as multiples of the mean diagonal magnitude.
pub const JITTER_SCHEDULE: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    m: Matrix,
}

impl LowerTriangular {
    /// Wraps a matrix that is already lower triangular with positive diagonal.
    /// Entries above the diagonal are zeroed.
    pub fn from_matrix(mut m: Matrix) -> Self {
        assert_eq!(m.rows(), m.cols(), "factor must be square");
        for i in 0..m.rows() {
            for j in (i + 1)..m.cols() {
                m.set(i, j, 0.0);
            }
        }
        LowerTriangular { m }
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }

    /// Reconstructs `L * L^T`.
    pub fn reconstruct(&self) -> Matrix {
        self.m.matmul(&self.m.transpose())
    }

    /// `2 * sum(ln L_ii)`, the log-determinant of the factored matrix.
    pub fn log_det(&self) -> f64 {
        self.m.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0
    }
}

/// Cholesky factorization `A = L L^T`.
///
/// Only the lower triangle of `A` is read. Fails with
/// [`Error::NotPositiveDefinite`] when a pivot is non-positive so the caller
/// can retry with jitter.
pub fn cholesky(a: &Matrix) -> Result<LowerTriangular> {
    a.check_symmetric(SYMMETRY_TOL)?;
    cholesky_lower_unchecked(a)
}

/// Factorization without the symmetry check; reads the lower triangle only.
pub(crate) fn cholesky_lower_unchecked(a: &Matrix) -> Result<LowerTriangular> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(LowerTriangular { m: l })
}

/// Cholesky with an escalating diagonal jitter.
///
/// The schedule is scale free: each attempt adds
/// `schedule[k] * mean(diag(A))` to the diagonal (falling back to an absolute
/// scale of 1 when the diagonal mean is non-positive, e.g. the zero matrix).
/// Jitter always starts at the first schedule entry, even for matrices that
/// are already positive definite, so the numerics are consistent across
/// inputs. Returns the factor together with the jitter actually used.
pub fn jittered_cholesky(a: &Matrix) -> Result<(LowerTriangular, f64)> {
    a.check_symmetric(SYMMETRY_TOL)?;
    let diag_mean = a.mean_diagonal();
    let scale = if diag_mean > 0.0 { diag_mean } else { 1.0 };
    let mut last = Error::NotPositiveDefinite { pivot: 0 };
    for mult in JITTER_SCHEDULE {
        let jitter = mult * scale;
        match cholesky_lower_unchecked(&a.add_diagonal(jitter)) {
            Ok(l) => return Ok((l, jitter)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Solves `L X = B` by forward substitution.
pub fn solve_lower(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    let n = l.dim();
    if b.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "solve_lower: factor is {n}x{n} but rhs has {} rows",
            b.rows()
        )));
    }
    let lm = l.as_matrix();
    let mut x = b.clone();
    for i in 0..n {
        for c in 0..b.cols() {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= lm.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / lm.get(i, i));
        }
    }
    Ok(x)
}

/// Solves `L^T X = B` by backward substitution, using the lower factor
/// directly (no explicit transpose).
pub fn solve_lower_transpose(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    let n = l.dim();
    if b.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "solve_lower_transpose: factor is {n}x{n} but rhs has {} rows",
            b.rows()
        )));
    }
    let lm = l.as_matrix();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for c in 0..b.cols() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= lm.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / lm.get(i, i));
        }
    }
    Ok(x)
}

/// Solves `U X = B` for upper-triangular `U` by backward substitution.
pub fn solve_upper(u: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = u.rows();
    if u.cols() != n || b.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "solve_upper: {}x{} vs rhs {} rows",
            u.rows(),
            u.cols(),
            b.rows()
        )));
    }
    let mut x = b.clone();
    for i in (0..n).rev() {
        for c in 0..b.cols() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= u.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / u.get(i, i));
        }
    }
    Ok(x)
}

/// `2 * sum(ln L_ii)` for a Cholesky factor.
pub fn log_det_from_chol(l: &LowerTriangular) -> f64 {
    l.log_det()
}

/// Solves `A X = B` for symmetric positive definite `A` via its factor.
pub fn solve_spd(l: &LowerTriangular, b: &Matrix) -> Result<Matrix> {
    solve_lower_transpose(l, &solve_lower(l, b)?)
}
