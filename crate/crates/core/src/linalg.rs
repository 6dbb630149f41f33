//! Symmetric positive definite solves with a single jittered retry.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal jitter (times trace/n) applied on the retry.
pub const JITTER_SCALE: f64 = 1e-10;

/// Cholesky factorization of an SPD matrix. On failure the diagonal is
/// lifted once by `JITTER_SCALE * trace / n`; a second failure is an error.
pub fn spd_factor(matrix: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("{what}: non-finite entries")));
    }
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(chol);
    }
    let n = matrix.nrows().max(1);
    let jitter = JITTER_SCALE * matrix.trace().abs() / n as f64;
    let mut lifted = matrix.clone();
    for i in 0..lifted.nrows() {
        lifted[(i, i)] += jitter;
    }
    Cholesky::new(lifted).ok_or_else(|| {
        Error::Numerical(format!(
            "{what}: not positive definite even after jitter {jitter:e}"
        ))
    })
}

/// Solve `matrix * X = rhs` for SPD `matrix`.
pub fn spd_solve(matrix: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(matrix, what)?.solve(rhs))
}

/// Log-determinant from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute norm when `b` is zero.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = frobenius(&(a - b));
    let scale = frobenius(b);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
