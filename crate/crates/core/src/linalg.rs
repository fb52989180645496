//! Dense symmetric linear algebra used throughout the crate.
//!
//! The matrices handled here are small (the dimension of a shape matrix), so
//! everything is built on a cyclic Jacobi eigensolver. Jacobi is slower than a
//! tridiagonal QR for large inputs but is accurate to a few ulps on small ones
//! and produces a deterministic ordering.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Off-diagonal norm, relative to the input norm, at which Jacobi stops.
const JACOBI_REL_TOL: f64 = 1e-15;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted descending and the matching eigenvectors as
/// columns. Ties keep the order the sweeps produced them in (stable sort).
/// Only the lower triangle is trusted; callers pass symmetric input.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();
    if !scale.is_finite() {
        return Err(Error::ConvergenceFailure { sweeps: 0 });
    }

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= JACOBI_REL_TOL * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate_columns(&mut a, p, q, c, s);
                rotate_rows(&mut a, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a);
        if !(off <= JACOBI_REL_TOL * scale) {
            return Err(Error::ConvergenceFailure {
                sweeps: MAX_JACOBI_SWEEPS,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Frobenius norm of the strictly off-diagonal part.
pub fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    off_diagonal_sq(a).sqrt()
}

/// Sum of squared strictly off-diagonal entries.
pub fn off_diagonal_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc
}

// A <- A P where P is the Jacobi rotation on (p, q).
fn rotate_columns(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..a.nrows() {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
}

// A <- P^T A.
fn rotate_rows(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..a.ncols() {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `U diag(f(lambda)) U^T` for a symmetric matrix.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    Ok(reconstruct(&values.iter().map(|&x| f(x)).collect::<Vec<_>>(), &vectors))
}

/// `U diag(d) U^T`.
pub fn reconstruct(values: &[f64], vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &d) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d);
    }
    let out = scaled * vectors.transpose();
    debug_assert_eq!(out.nrows(), n);
    symmetrize(&out)
}

/// `B^T M B`, symmetrized.
pub fn congruence(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(b.transpose() * m * b))
}

/// Flip each column so that its largest-magnitude entry is positive.
///
/// The first index wins when several entries share the largest magnitude.
pub fn canonicalize_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m.nrows() {
            let x = m[(i, j)].abs();
            if x > best_abs {
                best_abs = x;
                best = i;
            }
        }
        if m[(best, j)] < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}
