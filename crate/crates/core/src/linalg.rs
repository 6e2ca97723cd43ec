//! Small dense linear-algebra helpers shared by the filter modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};

/// Relative jitter added to the diagonal when the first factorization fails.
pub const JITTER_SCALE: f64 = 1e-10;

/// Lower-triangular factor `S` with `S·Sᵀ = cov`.
///
/// A failed factorization is retried once with `1e-10·trace(cov)/n` added to
/// the diagonal. A second failure yields [`FilterError::NotPositiveDefinite`].
pub fn matrix_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(FilterError::InvalidDimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::NotPositiveDefinite);
    }
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let jitter = JITTER_SCALE * cov.trace() / n as f64;
    if jitter > 0.0 {
        let mut repaired = cov.clone();
        for i in 0..n {
            repaired[(i, i)] += jitter;
        }
        if let Some(chol) = repaired.cholesky() {
            return Ok(chol.l());
        }
    }
    Err(FilterError::NotPositiveDefinite)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solves `L·x = b` for lower-triangular `L`.
pub fn forward_substitute(lower: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    lower
        .solve_lower_triangular(b)
        .ok_or(FilterError::Singular)
}
