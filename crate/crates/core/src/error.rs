use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("columns are not orthonormal: ||B^T B - I||_F = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty frame set")]
    EmptyFrameSet,

    #[error("empty sample")]
    EmptySample,

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("matrix is singular even after ridge regularization")]
    SingularAfterRidge,

    #[error("too few observations: {n} for {k} clusters")]
    TooFewObservations { n: usize, k: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no records to summarize")]
    EmptyRecords,

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
