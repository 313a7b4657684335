use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameter or configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (shapes, non-finite values, zero norms).
    #[error("input error: {0}")]
    Input(String),

    /// A value outside the domain an operation accepts (e.g. schedule step).
    #[error("out of range: {0}")]
    Range(String),

    /// A triplet batch with no anchor that has both a positive and a negative.
    #[error("degenerate batch: no anchor has both a positive and a negative sample")]
    DegenerateBatch,

    /// API misuse, such as calling backward without a cached forward pass.
    #[error("usage error: {0}")]
    Usage(String),

    /// Sample-id sets of probability matrices disagree.
    #[error("fusion error: {0}")]
    Fusion(String),

    /// Malformed file contents (PPM, policy, checkpoint, probability matrix).
    #[error("format error in {what}: {detail}")]
    Format { what: &'static str, detail: String },

    /// Numerical failure during training.
    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
