use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("header: {0}")]
    Header(String),

    /// `row` counts data rows from 1; the header is not a row.
    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },

    #[error("no data rows")]
    EmptyDataset,

    #[error("{0}")]
    Config(String),

    /// Raised by `estimate --strict` when any cell would be trimmed.
    #[error("{failing} of {total} cells not identified; refusing to trim under --strict")]
    NotIdentified { failing: usize, total: usize },

    #[error(transparent)]
    Core(#[from] hetid::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable prefix for the `error[CODE]` line on standard error.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "IO",
            CliError::Csv(_) => "CSV",
            CliError::MissingColumn(_) => "MISSING_COLUMN",
            CliError::Header(_) => "BAD_HEADER",
            CliError::InvalidRow { .. } => "INVALID_ROW",
            CliError::EmptyDataset | CliError::Core(hetid::Error::EmptyDataset) => "EMPTY_DATASET",
            CliError::Config(_) => "CONFIG",
            CliError::NotIdentified { .. } => "NOT_IDENTIFIED",
            CliError::Core(hetid::Error::NotIdentifiedEverywhere) => "NOT_IDENTIFIED_EVERYWHERE",
            CliError::Core(hetid::Error::InvalidRow { .. }) => "INVALID_ROW",
            CliError::Core(hetid::Error::TooManyBins { .. } | hetid::Error::Scheme(_)) => "SCHEME",
            CliError::Core(hetid::Error::InvalidSpec(_)) => "INVALID_SPEC",
            CliError::Core(_) => "INVALID_INPUT",
        }
    }

    /// 2 when identification fails, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotIdentified { .. }
            | CliError::Core(hetid::Error::NotIdentifiedEverywhere) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
