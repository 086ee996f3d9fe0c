use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in input to {op}")]
    NonFinite { op: &'static str },

    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f32 },

    #[error("mask optimization produced NaN loss at iteration {0}")]
    MaskNan(usize),

    #[error("bad tensor file {path}: {reason}")]
    TensorFormat { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl Error {
    /// Short stable name of the variant, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalar(_) => "non_scalar",
            Error::Invalid(_) => "invalid_argument",
            Error::Diverged { .. } => "diverged",
            Error::MaskNan(_) => "mask_nan",
            Error::TensorFormat { .. } => "tensor_format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Image(_) => "image",
            Error::Config(_) => "config",
        }
    }
}
