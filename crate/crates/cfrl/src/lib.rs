//! Files, configuration and the command-line front end for the `cfrl-core`
//! recommendation benchmark.

use std::io;
use std::path::{Path, PathBuf};

pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod logs;
pub mod report;

/// Failure reading or writing one of the run's files.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: cfrl_core::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl IoError {
    pub fn at(path: &Path, source: io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn data(path: &Path, source: cfrl_core::Error) -> Self {
        IoError::Data { path: path.to_path_buf(), source }
    }

    pub fn corrupt(path: &Path, message: String) -> Self {
        IoError::Corrupt { path: path.to_path_buf(), message }
    }
}
