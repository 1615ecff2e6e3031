use thiserror::Error;

/// Errors raised across the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum SicError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric overflow at ({row}, {col}): exponent {exponent:.3e}")]
    Overflow { row: usize, col: usize, exponent: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("quadrature did not converge: estimate {estimate:.6e}, error {error:.3e} after {intervals} intervals")]
    Quadrature {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SicError {
    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            SicError::Usage(_) => 1,
            SicError::Parse { .. }
            | SicError::Dimension(_)
            | SicError::Io(_)
            | SicError::Csv(_) => 2,
            SicError::Domain(_) => 1,
            SicError::Overflow { .. }
            | SicError::NotSpd(_)
            | SicError::Quadrature { .. }
            | SicError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SicError>;
