use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sample set: all samples identical")]
    DegenerateSamples,

    #[error("degenerate: zero centered kernel")]
    ZeroCenteredKernel,

    #[error("degenerate weights; binarization undefined")]
    DegenerateWeights,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss term `{term}` at epoch {epoch}")]
    Divergence { term: &'static str, epoch: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("model has not been trained")]
    Untrained,

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("cannot read image {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("parameter file: {0}")]
    ParamFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
