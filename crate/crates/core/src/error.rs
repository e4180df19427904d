use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid table: {0}")]
    Table(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dependency cycle among variables {0:?}")]
    Cycle(Vec<String>),

    #[error("auxiliary location `{location}` has a zero total for variable `{variable}`")]
    ZeroBlock { location: String, variable: String },

    #[error("missing table: {0}")]
    MissingTable(String),

    #[error("conditional table for `{child}` has an empty row for a parent combination with positive mass and no marginal fallback")]
    ZeroConditionalRow { child: String },

    #[error("support is empty after thresholding at tau = {tau}")]
    EmptySupport { tau: f64 },

    #[error("distributions are defined over different tuple spaces")]
    SpaceMismatch,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_) | Error::EmptySupport { .. } | Error::ZeroConditionalRow { .. }
        )
    }
}
