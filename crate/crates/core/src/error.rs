//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the library.
///
/// Exit-code mapping for the CLI lives in the binary crate; here the variants
/// are grouped by concern: I/O and parsing, domain invariants, numeric
/// failures, and generation-backend failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record could not be parsed. Carries file and 1-based line number.
    #[error("parse error in {file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// A domain invariant failed. Carries the entity id and the violated rule.
    #[error("invariant violation on {entity}: {rule}")]
    Invariant { entity: String, rule: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A target token had probability zero; the loss would be infinite.
    #[error("infinite loss: target probability is zero at step {step}")]
    InfiniteLoss { step: usize },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("invalid config: {0}")]
    Config(String),

    /// Generation backend failure or malformed backend output.
    #[error("generation failed for {request}: {message}")]
    Generation { request: String, message: String },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invariant(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Invariant {
            entity: entity.into(),
            rule: rule.into(),
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
