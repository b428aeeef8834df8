use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        first_line: usize,
        id: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite score {0}")]
    NonFiniteScore(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no embedding for item {0:?}")]
    MissingEmbedding(String),

    #[error("embedding for {0:?} has no usable tokens")]
    EmptyTokenization(String),

    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),

    #[error("prompt needs {needed} characters but the budget is {budget}")]
    PromptTooLong { needed: usize, budget: usize },

    #[error("mismatched query ids between compared runs: {0}")]
    IdMismatch(String),

    #[error("records come from different configurations ({0} and {1})")]
    MixedConfig(String, String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Short stable tag used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::Invalid(_) => "invalid",
            Error::NonFiniteScore(_) => "non_finite_score",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::EmptyTokenization(_) => "empty_tokenization",
            Error::ProviderUnreachable(_) => "provider_unreachable",
            Error::PromptTooLong { .. } => "prompt_too_long",
            Error::IdMismatch(_) => "id_mismatch",
            Error::MixedConfig(..) => "mixed_config",
            Error::Diverged(_) => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
