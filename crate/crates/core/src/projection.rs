//! Projection of a PSD matrix onto an orthonormal frame.
//!
//! For a frame `B` the best non-negative diagonal `D` minimizing
//! `||psi - B D B^T||_F` is the diagonal of `B^T psi B`, so everything here
//! works in the rotated basis: the projection index is the diagonal of the
//! rotated matrix and the residual is the norm of its off-diagonal part.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::psd::{NonNegDiagonal, OrthonormalFrame, PsdMatrix};

/// Entries of the projection index down to `-INDEX_CLAMP_TOL * max(1, ||psi||_F)`
/// are float noise and get clamped to zero.
const INDEX_CLAMP_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub index: NonNegDiagonal,
    pub projected: PsdMatrix,
    pub residual: f64,
}

fn check_dims(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<()> {
    if psi.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: psi.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `B^T psi B` (symmetrized).
pub fn rotated(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<DMatrix<f64>> {
    check_dims(psi, b)?;
    Ok(linalg::congruence(psi.as_matrix(), b.as_matrix()))
}

fn index_from_rotated(rot: &DMatrix<f64>, scale: f64) -> Result<NonNegDiagonal> {
    let floor = -INDEX_CLAMP_TOL * scale.max(1.0);
    let mut values = Vec::with_capacity(rot.nrows());
    for j in 0..rot.nrows() {
        let d = rot[(j, j)];
        if d >= 0.0 {
            values.push(d);
        } else if d > floor {
            values.push(0.0);
        } else {
            return Err(Error::Internal(format!(
                "projection index entry {d:e} is negative for a PSD input"
            )));
        }
    }
    Ok(NonNegDiagonal::from_trusted(values))
}

/// The projection index `diag(B^T psi B)`.
pub fn projection_index(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<NonNegDiagonal> {
    let rot = rotated(psi, b)?;
    index_from_rotated(&rot, psi.as_matrix().norm())
}

/// Projection `B diag(index) B^T` together with its index and residual.
pub fn project(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<ProjectionResult> {
    let rot = rotated(psi, b)?;
    let index = index_from_rotated(&rot, psi.as_matrix().norm())?;
    let residual = linalg::off_diagonal_norm(&rot);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(index.values()));
    let projected = PsdMatrix::from_trusted(b.as_matrix() * d * b.as_matrix().transpose());
    Ok(ProjectionResult {
        index,
        projected,
        residual,
    })
}

/// Squared residual `||psi - P_B(psi)||_F^2`, computed in the rotated basis.
pub fn residual_sq(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<f64> {
    Ok(linalg::off_diagonal_sq(&rotated(psi, b)?))
}

/// `||psi - P_B(psi)||_F` without forming the projection.
pub fn residual_distance(psi: &PsdMatrix, b: &OrthonormalFrame) -> Result<f64> {
    Ok(residual_sq(psi, b)?.sqrt())
}

/// Index of the frame with the smallest residual and that residual.
///
/// Ties go to the lowest index.
pub fn min_distance_to_set(psi: &PsdMatrix, frames: &[OrthonormalFrame]) -> Result<(usize, f64)> {
    let (h, sq) = min_residual_sq(psi, frames)?;
    Ok((h, sq.sqrt()))
}

/// Like [`min_distance_to_set`] but returns the squared distance.
pub fn min_residual_sq(psi: &PsdMatrix, frames: &[OrthonormalFrame]) -> Result<(usize, f64)> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameSet);
    }
    let mut best = (0, f64::INFINITY);
    for (h, b) in frames.iter().enumerate() {
        let d = residual_sq(psi, b)?;
        if d < best.1 {
            best = (h, d);
        }
    }
    Ok(best)
}
