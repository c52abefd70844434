use thiserror::Error;

/// Errors raised by the simulator, statistics and audit layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("data corruption: {0}")]
    DataCorruption(String),
    #[error("state corruption at t = {t}: {what}")]
    StateCorruption { t: f64, what: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("undefined statistics: {0}")]
    UndefinedStatistics(String),
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("insufficient sample: need at least {needed}, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("record window error: {0}")]
    Window(String),
    #[error("merge error: {0}")]
    Merge(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("ensemble failure: {0}")]
    Ensemble(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
