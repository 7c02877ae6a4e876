use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the decomposition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid annotation ({field}): {reason}")]
    InvalidAnnotation { field: String, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid naming table: {0}")]
    NamingTable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn annotation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidAnnotation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Validation errors are caused by user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidImage(_)
                | Error::InvalidInput(_)
                | Error::InvalidAnnotation { .. }
                | Error::InvalidConfig(_)
                | Error::EmptyMask(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
