use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("hyperparameter `{name}` = {value} violates constraint: {constraint}")]
    Constraint {
        name: String,
        value: f64,
        constraint: &'static str,
    },

    #[error("hyperparameter `{name}` is not used by `{algorithm}`")]
    UnexpectedHyperparameter { algorithm: String, name: String },

    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: &'static str, step: Option<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },

    /// The token has exactly zero probability under the model's support mask,
    /// so its log-probability is −∞.
    #[error("token {token} at position {position} has zero probability (log-probability is -inf)")]
    ZeroProbability { position: usize, token: usize },

    #[error("response does not match either configured branch of the logits model")]
    UnknownBranch,

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status for the experiment runner: 2 for configuration
    /// problems, 3 for numeric or model failures at run time, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 4,
            Error::Json(_)
            | Error::UnknownAlgorithm(_)
            | Error::Constraint { .. }
            | Error::UnexpectedHyperparameter { .. }
            | Error::InvalidArgument(_)
            | Error::Assumption(_) => 2,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 4,
            _ => 3,
        }
    }
}
