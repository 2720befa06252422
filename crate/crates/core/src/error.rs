use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite feature value at feature {feature}")]
    NonFinite { feature: usize },

    #[error("instance has {got} features, expected {expected}")]
    FeatureCount { expected: usize, got: usize },

    #[error("invalid training parameters: {0}")]
    InvalidParams(String),

    #[error("no OOB coverage: no instance is out-of-bag for any tree")]
    NoOobCoverage,

    #[error("pruning requires bagging-trained ensemble")]
    NotPrunable,

    #[error("purity threshold must be a positive number, got {0}")]
    InvalidThreshold(f64),

    #[error("tolerance must lie in [0, 1), got {0}")]
    InvalidTolerance(f64),

    #[error("TCAM too small for path {path}: {length} conditions, TCAM size {tcam_size}")]
    TcamTooSmall {
        path: usize,
        length: usize,
        tcam_size: usize,
    },

    #[error("TCAM size must be at least 1")]
    ZeroTcamSize,

    #[error("query width {got} does not match block width {expected}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("truth assignment covers {got} conditions, layout needs condition {missing}")]
    MissingCondition { missing: usize, got: usize },

    #[error("inconsistent match masks: {0}")]
    MaskShape(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("{context}: {message}")]
    Format { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that signal a broken internal guarantee rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}
