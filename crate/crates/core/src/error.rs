//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer dimensions {0:?}: need at least two positive entries")]
    InvalidDims(Vec<usize>),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value encountered during training ({0})")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{bad} of {total} rows rejected, above the {limit:.2}% tolerance (first: row {first_row}: {first_reason})")]
    TooManyBadRows {
        bad: usize,
        total: usize,
        limit: f64,
        first_row: u64,
        first_reason: String,
    },

    #[error("labels missing for {0} edge(s)")]
    MissingLabels(usize),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDims(_) => "invalid_dims",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Schema(_) => "schema",
            Error::TooManyBadRows { .. } => "bad_rows",
            Error::MissingLabels(_) => "missing_labels",
            Error::Config { .. } => "config",
            Error::Format(_) => "format",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::Csv(_) => "csv",
            Error::Io { .. } | Error::RawIo(_) => "io",
        }
    }
}
