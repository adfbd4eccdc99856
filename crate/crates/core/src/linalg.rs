//! Small dense linear-algebra helpers shared by the controllers and checks.

use nalgebra::{DMatrix, DVector};

// nalgebra's SVD can lose several digits on rank-deficient inputs, which is
// the normal case for Hankel matrices. faer's is used instead.
fn thin_svd(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = f.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    Some((
        DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)]),
        (0..k).map(|i| s[i]).collect(),
        DMatrix::from_fn(m.ncols(), k, |i, j| v[(i, j)]),
    ))
}

/// Singular values of `m`, sorted in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut sv = f.singular_values().unwrap_or_default();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank: singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > rel_tol * max).count(),
        _ => 0,
    }
}

/// Minimum-norm least-squares solution of `m x = b` via a truncated SVD.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(m.ncols());
    }
    let Some((u, s, v)) = thin_svd(m) else {
        return DVector::zeros(m.ncols());
    };
    let max = s.iter().copied().fold(0.0, f64::max);
    let mut c = u.transpose() * b;
    for (ci, &si) in c.iter_mut().zip(&s) {
        *ci = if max > 0.0 && si > rel_tol * max { *ci / si } else { 0.0 };
    }
    v * c
}

/// Whether `m` is symmetric positive definite (up to symmetrization).
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    if (m - &sym).amax() > 1e-9 * (1.0 + m.amax()) {
        return false;
    }
    sym.cholesky().is_some()
}

/// Stack the columns of `m` into one vector (column-major order).
pub fn stack_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}
