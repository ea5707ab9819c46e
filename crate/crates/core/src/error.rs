use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are coarse on purpose: the command-line front end maps each
/// one onto a process exit code through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    Length { len: usize, max: usize },
    #[error("source sentence is empty")]
    EmptySource,
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("batch size error: {0}")]
    BatchSize(String),
    #[error("batch composition error: {0}")]
    BatchComposition(String),
    #[error("backward already ran on this tape; reset it first")]
    AlreadyBackpropagated,
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("training diverged at step {step}: {breakdown}")]
    Divergence { step: u64, breakdown: String },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure classes used for exit codes and error prefixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Divergence,
    Io,
    Internal,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Divergence => 4,
            Category::Io => 5,
            Category::Internal => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Divergence => "divergence",
            Category::Io => "io",
            Category::Internal => "internal",
        }
    }
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Config { .. } | Error::Usage(_) | Error::BatchSize(_) => Category::Config,
            Error::BatchComposition(_) => Category::Config,
            Error::Format { .. } | Error::Data(_) | Error::Input(_) | Error::EmptySource => {
                Category::Data
            }
            Error::Length { .. } | Error::Evaluation(_) => Category::Data,
            Error::Divergence { .. } => Category::Divergence,
            Error::Io { .. } => Category::Io,
            _ => Category::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
