use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unknown recipe '{0}'")]
    UnknownRecipe(String),

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sweep cell (variant {variant}, depth {depth}, rep {rep}): {source}")]
    Cell {
        variant: String,
        depth: usize,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes and C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Learner,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParam(_) | Error::UnknownRecipe(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::MissingValue { .. }
            | Error::UnknownColumn(_)
            | Error::Schema(_)
            | Error::InvalidData(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Member { .. } | Error::Cell { .. } => ErrorClass::Learner,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
