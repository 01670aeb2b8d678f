use thiserror::Error;

use crate::hprof::HprofError;
use crate::vae::LossHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's documented preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular system: non-positive pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },

    #[error("rank deficiency: only {available} component(s) above the eigenvalue floor, {requested} requested; lower r")]
    RankDeficient { requested: usize, available: usize },

    /// Every grid candidate failed; `last` is the final candidate's error.
    #[error("grid search failed: every gamma candidate was skipped; last: {last}")]
    NoCandidates { last: Box<Error> },

    /// Training produced a NaN or infinity. Carries the epochs completed so far.
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {what}")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: &'static str,
        history: Box<LossHistory>,
    },

    #[error("non-finite {0}; the model parameters may have diverged")]
    NonFinite(&'static str),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Hprof(#[from] HprofError),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
