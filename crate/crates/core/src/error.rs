use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation (negative mass, ratio > 1, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unit mismatch: activity in `{activity}` but emission factor per `{factor}`")]
    Unit { activity: String, factor: String },

    /// The known quantities cannot produce the requested one.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{0}")]
    Load(#[from] LoadError),

    #[error("conservation audit failed for {} key(s): {}", .0.len(), .0.join("; "))]
    Conservation(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// A problem tied to a line of an input table. Line 1 is the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.line, self.message)
    }
}

/// Every row-level problem found while loading one table. Loaders never return a
/// partially loaded table alongside issues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadError {
    pub table: String,
    pub issues: Vec<RowIssue>,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} problem(s)", self.table, self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for LoadError {}
