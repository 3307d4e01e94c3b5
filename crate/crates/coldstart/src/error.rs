use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged: non-finite state at t = {t}")]
    IntegrationDiverged { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("degenerate matrix: spectral radius is numerically zero")]
    DegenerateMatrix,

    #[error("power iteration stagnated after {iters} iterations (relative change {change:.3e})")]
    PowerIterationStagnated { iters: usize, change: f64 },

    #[error("insufficient data: need more than {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("Lipschitz bound inapplicable: contraction estimate {l_fx} is not below 1")]
    BoundInapplicable { l_fx: f64 },

    #[error("cannot pick a kernel scale: all pairwise distances are zero")]
    ZeroEpsilon,

    #[error("zero row sum in affinity matrix at row {row}")]
    ZeroRowSum { row: usize },

    #[error("mode index {index} out of range (have {available} modes)")]
    ModeIndexOutOfRange { index: usize, available: usize },

    #[error(
        "geometric harmonics threshold too strict: kept {kept} modes but need more than {min} \
         (lower delta)"
    )]
    ThresholdTooStrict { kept: usize, min: usize },

    #[error("component count {k} out of range (data is {n} x {dim})")]
    ComponentCountOutOfRange { k: usize, n: usize, dim: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
