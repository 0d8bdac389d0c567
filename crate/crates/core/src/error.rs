use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("trajectory of length {len} is too short for {required} samples")]
    InsufficientLength { len: usize, required: usize },

    #[error("cohort of {0} trajectories is too small to rank (need at least 2)")]
    CohortTooSmall(usize),

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDivergence { step: u64, loss: f64 },

    #[error("sampling diverged at denoising step {step}")]
    SamplingDivergence { step: usize },

    #[error("demonstration replay diverged by {divergence} (limit {limit})")]
    InfeasibleDemo { divergence: f64, limit: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
