//! Dense helpers for the small (d ≤ ~5) matrices that show up per path.
//!
//! Matrices are row-major `&[f64]` of length `d * d`.

use nalgebra::{DMatrix, DVector};

pub(crate) fn to_matrix(m: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, m)
}

/// Inverse, or `None` when the smallest singular value falls below `floor`.
pub(crate) fn inverse(m: &[f64], d: usize, floor: f64) -> Option<Vec<f64>> {
    if is_diagonal(m, d) {
        let mut out = vec![0.0; d * d];
        for k in 0..d {
            let v = m[k * d + k];
            if !(v.abs() > floor) {
                return None;
            }
            out[k * d + k] = 1.0 / v;
        }
        return Some(out);
    }
    let mat = to_matrix(m, d);
    if !(min_singular_value(m, d) > floor) {
        return None;
    }
    let inv = mat.try_inverse()?;
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = inv[(r, c)];
        }
    }
    Some(out)
}

pub(crate) fn is_diagonal(m: &[f64], d: usize) -> bool {
    (0..d).all(|r| (0..d).all(|c| r == c || m[r * d + c] == 0.0))
}

pub(crate) fn min_singular_value(m: &[f64], d: usize) -> f64 {
    if is_diagonal(m, d) {
        return (0..d).map(|k| m[k * d + k].abs()).fold(f64::INFINITY, f64::min);
    }
    let sv = to_matrix(m, d).singular_values();
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub(crate) fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, dropping eigenvalues
/// with magnitude below `cutoff`.
pub(crate) fn sym_pseudo_inverse(m: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lambda;
        }
    }
    inv
}

/// `y = m x` for row-major `m`.
#[inline]
pub(crate) fn mat_vec(m: &[f64], x: &[f64], y: &mut [f64]) {
    let d = x.len();
    for r in 0..y.len() {
        let row = &m[r * d..(r + 1) * d];
        y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `yᵀ = xᵀ m`, i.e. `y = mᵀ x`.
#[inline]
pub(crate) fn mat_t_vec(m: &[f64], x: &[f64], y: &mut [f64]) {
    let d = y.len();
    y.iter_mut().for_each(|v| *v = 0.0);
    for (r, &xr) in x.iter().enumerate() {
        for c in 0..d {
            y[c] += m[r * d + c] * xr;
        }
    }
}

pub(crate) fn dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
