use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the sampling pipeline.
///
/// Variants are grouped so that callers (notably the command-line front
/// end) can map them onto configuration, data and numeric failure classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("video `{video}`, modality `{modality}`: header mismatch: {message}")]
    HeaderMismatch {
        video: String,
        modality: String,
        message: String,
    },

    #[error("video `{video}`: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        video: String,
        label: usize,
        num_classes: usize,
    },

    #[error("video `{video}`: missing modality `{modality}`")]
    MissingModality { video: String, modality: String },

    #[error("video `{video}`: no classifier scores available")]
    MissingScores { video: String },

    #[error("unknown video `{0}`")]
    UnknownVideo(String),

    #[error("{what}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{count} manifest(s) failed validation")]
    Invalid { count: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Coarse failure class, used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) => ErrorKind::Config,
            Error::NonFinite { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
