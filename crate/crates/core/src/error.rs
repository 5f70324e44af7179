use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty window")]
    EmptyWindow,

    #[error("invalid digraph: {0}")]
    InvalidGraph(String),

    #[error("invalid topology ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("matrix is not nonnegative: entry ({row}, {col}) = {value}")]
    NotNonnegative { row: usize, col: usize, value: f64 },

    #[error("matrix is not stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stability condition violated: need 0 < h*kappa < 1, got h*kappa = {0}")]
    StabilityViolated(f64),

    #[error("time {t} outside the schedule range [0, {end})")]
    OutOfRange { t: u64, end: u64 },

    #[error("insufficient schedule: need {needed} dwell draws, have {available}")]
    InsufficientSchedule { needed: usize, available: usize },

    #[error("divergent envelope exponent: 1 + c(M+N-1)log(1-h*kappa) = {0} <= 0")]
    DivergentEnvelope(f64),

    #[error("series divergent, increase M: {0}")]
    SeriesDivergent(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
