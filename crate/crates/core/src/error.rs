//! Error taxonomy shared by the library and the CLI.
//!
//! Exit-code mapping for command-line use: configuration and input errors
//! map to exit code 1, runtime and write failures to exit code 2.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameters, unknown keys, version mismatch).
    #[error("config error: {0}")]
    Config(String),
    /// Invalid input data (malformed files, shape mismatches, dangling paths).
    #[error("input error: {0}")]
    Input(String),
    /// Failure while computing (divergence, numeric breakdown).
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("failed to read {path}: {source}")]
    ReadIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    WriteIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    /// Process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::ReadIo { .. } => 1,
            Error::Runtime(_) | Error::WriteIo { .. } => 2,
        }
    }
}
