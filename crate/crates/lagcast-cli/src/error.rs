//! CLI-side errors and their exit-code mapping.

use thiserror::Error;

/// Everything the command-line layer can fail with. Core modeling
/// errors pass through unchanged; the rest are configuration and file
/// problems raised before any model runs.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: unknown key '{key}'")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("invalid configuration: {0}")]
    Constraint(String),
    #[error("{file}: header mismatch: expected '{expected}', got '{got}'")]
    HeaderMismatch {
        file: String,
        expected: &'static str,
        got: String,
    },
    #[error("{file}: row {row}: field '{field}' has invalid value '{value}'")]
    NonNumericField {
        file: String,
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error(transparent)]
    Core(#[from] lagcast_core::Error),
}

impl CliError {
    /// Exit status: 0 is success (not represented here), 1 a validation
    /// problem with inputs or configuration, 2 a numerical procedure
    /// failing on valid inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn csv_err(path: &std::path::Path, source: csv::Error) -> CliError {
    CliError::Csv {
        path: path.display().to_string(),
        source,
    }
}
