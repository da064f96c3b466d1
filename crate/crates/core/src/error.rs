//! Crate-wide error type with a coarse kind used for process exit codes.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("ingestion error at frame {frame}: {msg}")]
    Ingest { frame: String, msg: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("evaluation error on {item}: {msg}")]
    Eval { item: String, msg: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Contract(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
