//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{GameError, Result};

/// Reciprocal condition number below which a matrix is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

pub fn solve(m: &DMatrix<f64>, rhs: &[f64], what: &str) -> Result<Vec<f64>> {
    if rcond(m) < SINGULAR_RCOND {
        return Err(GameError::SingularMatrix(what.to_string()));
    }
    m.clone()
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| GameError::SingularMatrix(what.to_string()))
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if rcond(m) < SINGULAR_RCOND {
        return Err(GameError::SingularMatrix(what.to_string()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| GameError::SingularMatrix(what.to_string()))
}

/// Smallest eigenvalue of the symmetric part `M + Mᵀ`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = m + m.transpose();
    s.symmetric_eigen().eigenvalues.min()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

pub fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m.transpose() * DVector::from_column_slice(v)).as_slice().to_vec()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(GameError::Config("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
