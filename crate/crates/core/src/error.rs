use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time index {index} outside trajectory of length {len}")]
    TimeRange { index: usize, len: usize },

    #[error("delta_l values must be sorted ascending")]
    UnsortedDeltaL,

    #[error("DOE-coupled optics requires a coupling kernel")]
    MissingKernel,

    #[error("power iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    PowerIteration { residual: f64, iterations: usize },

    #[error("singular linear system (try a regularizer > 0)")]
    SingularSystem,

    #[error("non-finite loss at epoch {epoch}: {value}")]
    NonFiniteLoss { epoch: usize, value: f64 },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
