use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("neighbor graph is disconnected: points {a} and {b} lie in different components")]
    Disconnected { a: usize, b: usize },

    #[error("singular local system for point {point}; use a regularization > 0")]
    SingularSystem { point: usize },

    #[error("all points are identical; nearest-neighbor distance is undefined")]
    DegenerateData,

    #[error("non-finite {quantity} at epoch {epoch}")]
    NonFinite { epoch: usize, quantity: String },

    #[error("{0}")]
    Undefined(String),
}
