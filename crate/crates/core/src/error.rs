use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed NPY magic, version or header.
    #[error("NPY format error: {0}")]
    Format(String),

    /// Well-formed input that uses a feature we do not read (Fortran order, dtype).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Non-finite or otherwise invalid values inside an array.
    #[error("data error: {0}")]
    Data(String),

    #[error("failed to load model: {0}")]
    Load(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("too few tail points: need {needed}, have {have}")]
    TooFewTailPoints { needed: usize, have: usize },

    #[error("model {0} has no usable weight matrices")]
    EmptyModel(String),

    #[error("insufficient data: need at least {needed} points, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no usable records in corpus")]
    EmptyCorpus,

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Unsupported(_)
            | Error::Data(_)
            | Error::Load(_)
            | Error::Shape(_)
            | Error::UnsupportedTopology(_)
            | Error::EmptyCorpus => 3,
            Error::Numeric(_)
            | Error::Domain(_)
            | Error::TooFewTailPoints { .. }
            | Error::EmptyModel(_)
            | Error::InsufficientData { .. }
            | Error::DegenerateFit(_) => 4,
        }
    }
}
