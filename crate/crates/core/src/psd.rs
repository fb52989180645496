//! Symmetric positive semi-definite matrices, orthonormal frames, and their
//! randomized constructors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for the PSD check: eigenvalues down to
/// `-PSD_REL_TOL * spectral_radius` are accepted.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Frobenius deviation of `B^T B` from the identity allowed for a frame.
pub const FRAME_TOL: f64 = 1e-10;

/// Absolute asymmetry accepted when reading matrices from files.
pub const READ_SYMMETRY_TOL: f64 = 1e-9;

/// A symmetric positive semi-definite `p x p` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct PsdMatrix {
    inner: DMatrix<f64>,
}

impl PsdMatrix {
    /// Symmetrize `raw` and check that it is PSD up to the relative tolerance.
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        check_square(&raw)?;
        let sym = linalg::symmetrize(&raw);
        let (values, _) = linalg::symmetric_eigen(&sym)?;
        let radius = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tolerance = PSD_REL_TOL * radius;
        let min = values.last().copied().unwrap_or(0.0);
        if min < -tolerance {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                tolerance,
            });
        }
        Ok(Self { inner: sym })
    }

    /// Symmetrize `raw` and clamp any negative eigenvalues to zero.
    ///
    /// Returns the matrix and the most negative eigenvalue that was clamped
    /// (zero when nothing changed).
    pub fn new_clamped(raw: DMatrix<f64>) -> Result<(Self, f64)> {
        check_square(&raw)?;
        let sym = linalg::symmetrize(&raw);
        let (values, vectors) = linalg::symmetric_eigen(&sym)?;
        let min = values.last().copied().unwrap_or(0.0);
        if min >= 0.0 {
            return Ok((Self { inner: sym }, 0.0));
        }
        let clamped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        Ok((
            Self {
                inner: linalg::reconstruct(&clamped, &vectors),
            },
            min,
        ))
    }

    /// Clamp eigenvalues inside the tolerance band to exactly zero.
    pub fn clamp_negative(&self) -> Result<Self> {
        Ok(Self::new_clamped(self.inner.clone())?.0)
    }

    /// Build from data already known to be symmetric PSD (e.g. `B D B^T`
    /// with `D >= 0`, or a sum of PSD matrices). Only symmetrizes.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        Self {
            inner: linalg::symmetrize(&m),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn identity(p: usize) -> Self {
        Self {
            inner: DMatrix::identity(p, p),
        }
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            inner: DMatrix::zeros(p, p),
        }
    }

    /// Diagonal matrix; negative entries are rejected.
    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        let d = NonNegDiagonal::new(values.to_vec())?;
        Ok(Self {
            inner: DMatrix::from_diagonal(&DVector::from_vec(d.0)),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    /// `Q M Q^T` for an orthonormal `Q`.
    pub fn conjugate(&self, q: &OrthonormalFrame) -> Self {
        Self::from_trusted(q.as_matrix() * &self.inner * q.as_matrix().transpose())
    }

    /// Sum of PSD matrices (PSD by construction).
    pub fn sum<'a>(p: usize, items: impl IntoIterator<Item = &'a PsdMatrix>) -> Self {
        let mut acc = DMatrix::zeros(p, p);
        for m in items {
            acc += &m.inner;
        }
        Self::from_trusted(acc)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "PSD matrices can only be scaled by non-negative factors, got {factor}"
            )));
        }
        Ok(Self::from_trusted(&self.inner * factor))
    }
}

/// Symmetrize and validate a raw square array.
pub fn make_psd(raw: &DMatrix<f64>) -> Result<PsdMatrix> {
    PsdMatrix::new(raw.clone())
}

/// Columns of an orthogonal `p x p` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct OrthonormalFrame {
    inner: DMatrix<f64>,
}

impl OrthonormalFrame {
    /// Wrap a matrix whose columns are orthonormal within [`FRAME_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let deviation = orthonormality_deviation(&m);
        if !(deviation < FRAME_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { inner: m })
    }

    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_deviation(&m) < 1e-8);
        Self { inner: m }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            inner: DMatrix::identity(p, p),
        }
    }

    /// Planar rotation by `angle` radians (`p = 2`).
    pub fn rotation_2d(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            inner: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    /// Copy with the sign convention applied: the largest-magnitude entry of
    /// every column is positive.
    pub fn canonical(&self) -> Self {
        let mut m = self.inner.clone();
        linalg::canonicalize_signs(&mut m);
        Self { inner: m }
    }

    /// `Q B`.
    pub fn left_mul(&self, q: &OrthonormalFrame) -> Self {
        Self::from_trusted(q.as_matrix() * &self.inner)
    }

    /// Reorder columns; `order[j]` is the source column of new column `j`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let p = self.dim();
        Self {
            inner: DMatrix::from_fn(p, p, |r, c| self.inner[(r, order[c])]),
        }
    }

    pub fn deviation(&self) -> f64 {
        orthonormality_deviation(&self.inner)
    }
}

/// `||B^T B - I||_F`.
pub fn orthonormality_deviation(m: &DMatrix<f64>) -> f64 {
    let p = m.ncols();
    (m.transpose() * m - DMatrix::<f64>::identity(p, p)).norm()
}

/// A diagonal matrix with non-negative entries, stored as its diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonNegDiagonal(Vec<f64>);

impl NonNegDiagonal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "diagonal entry {v} is negative"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Frobenius norm of the diagonal matrix.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Spectral decomposition `U D U^T` with eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: OrthonormalFrame,
}

impl EigenPair {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        linalg::reconstruct(&self.values, self.vectors.as_matrix())
    }
}

/// Eigendecomposition with values descending and canonical column signs.
pub fn sym_eigen(m: &PsdMatrix) -> Result<EigenPair> {
    let (values, mut vectors) = linalg::symmetric_eigen(m.as_matrix())?;
    linalg::canonicalize_signs(&mut vectors);
    Ok(EigenPair {
        values,
        vectors: OrthonormalFrame::from_trusted(vectors),
    })
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Haar-distributed orthogonal frame (sign convention applied).
///
/// QR of a standard Gaussian matrix, with each column of `Q` multiplied by
/// the sign of the matching diagonal entry of `R`.
pub fn random_orthonormal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> OrthonormalFrame {
    assert!(p >= 1, "frame dimension must be positive");
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    linalg::canonicalize_signs(&mut q);
    OrthonormalFrame::from_trusted(q)
}

/// `U diag(lambda) U^T` with `U` Haar and `lambda` uniform on `[lo, hi]`.
pub fn random_psd<R: Rng + ?Sized>(p: usize, lo: f64, hi: f64, rng: &mut R) -> Result<PsdMatrix> {
    if !(0.0 <= lo && lo <= hi) || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "eigenvalue range [{lo}, {hi}] must satisfy 0 <= lo <= hi"
        )));
    }
    let u = random_orthonormal(p, rng);
    let values: Vec<f64> = (0..p).map(|_| rng.random_range(lo..=hi)).collect();
    Ok(PsdMatrix::from_trusted(linalg::reconstruct(
        &values,
        u.as_matrix(),
    )))
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::NotSquare {
            rows: n,
            cols: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// On-disk matrix representation: `{"dim": p, "rows": [[...], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            dim: m.nrows(),
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: self.rows.len(),
            });
        }
        matrix_from_rows(&self.rows)
    }
}

impl TryFrom<MatrixJson> for PsdMatrix {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        let m = value.to_matrix()?;
        let max_asymmetry = (&m - m.transpose()).amax();
        if max_asymmetry > READ_SYMMETRY_TOL {
            return Err(Error::NotSymmetric { max_asymmetry });
        }
        PsdMatrix::new(m)
    }
}

impl From<PsdMatrix> for MatrixJson {
    fn from(value: PsdMatrix) -> Self {
        MatrixJson::from_matrix(&value.inner)
    }
}

impl TryFrom<MatrixJson> for OrthonormalFrame {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        OrthonormalFrame::new(value.to_matrix()?)
    }
}

impl From<OrthonormalFrame> for MatrixJson {
    fn from(value: OrthonormalFrame) -> Self {
        MatrixJson::from_matrix(&value.inner)
    }
}
