use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("{file}: row {row}: {message}")]
    Schema {
        file: String,
        row: usize,
        message: String,
    },

    #[error("{file}: duplicate annotation for rev_id {rev_id}, worker_id {worker_id}")]
    DuplicateAnnotation {
        file: String,
        rev_id: u64,
        worker_id: u64,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("stratum {0} has no examples")]
    EmptyStratum(String),

    #[error("quota infeasible: {0}")]
    Quota(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("blacklist {0} has no usable entries")]
    EmptyBlacklist(PathBuf),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("backend `{0}` does not expose embedding gradients")]
    Capability(String),

    #[error("operation requires a {expected} dataset, got {got}")]
    TaskMismatch { expected: String, got: String },

    /// A metric whose denominator (or rank variance) is zero.
    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: String,
    },

    #[error("invalid model file: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn { .. }
                | Error::Schema { .. }
                | Error::DuplicateAnnotation { .. }
                | Error::Parameter(_)
                | Error::Config(_)
                | Error::TaskMismatch { .. }
                | Error::EmptyBlacklist(_)
        )
    }

    pub(crate) fn undefined(metric: &'static str, reason: impl Into<String>) -> Self {
        Error::UndefinedMetric {
            metric,
            reason: reason.into(),
        }
    }
}
