use thiserror::Error;

/// Errors produced by the change-detection pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The occupancy threshold left no query point occupied; the observation is unusable.
    #[error("full-shape reconstruction is empty")]
    EmptyReconstruction,

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("insufficient data: need at least {needed} point pairs, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("placement failed: {0}")]
    Placement(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
