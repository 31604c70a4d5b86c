//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The CLI maps these onto exit codes: input/config problems exit with 2,
/// numeric failures (divergent integration, unattainable smoothing targets)
/// with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("divergence at integration step {step}: {context}")]
    Divergence { step: usize, context: String },

    #[error("rank-deficient design: collinear columns {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateData(msg.into())
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// by the numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::DegenerateData(_)
            | Error::RankDeficient { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Config(_) => true,
            Error::Numeric(_) | Error::Divergence { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
