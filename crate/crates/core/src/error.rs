use thiserror::Error;

/// Errors produced by the simulation, training and prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical blow-up at node {node} (t = {time}): value {value}")]
    NumericalBlowup { node: usize, time: f64, value: f64 },

    #[error("path {path}: {source}")]
    PathFailed {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value at expression node {node} ({kind})")]
    NonFinite { node: usize, kind: &'static str },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable category, used for CLI exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NumericalBlowup { .. } => "numerical-blowup",
            Error::PathFailed { source, .. } => source.category(),
            Error::NonFinite { .. } => "non-finite-value",
            Error::Io(_) => "io",
            Error::Json(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
