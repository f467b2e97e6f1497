use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported wav format: {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid config field `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error("invalid model spec `{spec}`: {detail}")]
    ModelSpec { spec: String, detail: String },

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("class count mismatch: model has {model}, corpus has {corpus}")]
    ClassCountMismatch { model: usize, corpus: usize },

    #[error("no waveform kernels to analyze")]
    NoWaveformKernels,

    #[error("invalid pretraining stage transition: {0}")]
    StageTransition(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::File { .. } | Error::Io(_) => ErrorKind::Io,
            Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
