use std::fmt;

use thiserror::Error;

/// A single config validation failure, addressed by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SafariError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid config:\n{}", format_fields(.0))]
    Validation(Vec<FieldError>),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("degenerate saliency: every score is zero")]
    DegenerateSaliency,

    #[error("mask-induced error is undefined for an all-zero parameter vector")]
    UndefinedDelta,

    #[error("client {0} has no local data")]
    EmptyClient(usize),

    #[error("no active client is available as a surrogate")]
    NoSurrogate,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value produced in round {round}")]
    NonFinite { round: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("  {f}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, SafariError>;
