use std::path::PathBuf;

use chrono::{DateTime, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("session locked: {reason}")]
    Locked { reason: String, unlock_at: Option<DateTime<Utc>> },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("event log {path} is empty")]
    EmptyLog { path: PathBuf },
    #[error("event log {path} is corrupt at line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl StudyError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StudyError {
        let path = path.into();
        move |source| StudyError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, StudyError>;
