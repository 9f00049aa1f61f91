use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto coarse failure classes with [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: column {column} ({reason})")]
    Header { column: usize, reason: String },

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("duplicate ticker {0}")]
    DuplicateTicker(String),

    #[error("non-positive price {price} at ({date}, {ticker})")]
    NonPositivePrice {
        date: NaiveDate,
        ticker: String,
        price: f64,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("empty result: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid graph archive: {0}")]
    Archive(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Stage,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            // Unreadable or malformed inputs stay data errors inside a stage.
            Error::Stage { source, .. } if source.class() == ErrorClass::Data => ErrorClass::Data,
            Error::Stage { .. } | Error::Shape { .. } => ErrorClass::Stage,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        assert_eq!(Error::Config("x".into()).class(), ErrorClass::Config);
        assert_eq!(Error::Parse { line: 1, reason: "x".into() }.class(), ErrorClass::Data);
        assert_eq!(Error::Empty("x".into()).in_stage("ingest").class(), ErrorClass::Data);
        assert_eq!(Error::InvalidArgument("x".into()).in_stage("pca").class(), ErrorClass::Stage);
        assert_eq!(Error::shape("op", "x").class(), ErrorClass::Stage);
    }
}
