use std::path::PathBuf;

use crate::world::PromptId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),

    #[error("unknown prompt id {0}")]
    UnknownPrompt(PromptId),

    #[error("invalid answer path for prompt {prompt}: {reason}")]
    InvalidPath { prompt: PromptId, reason: String },

    #[error("missing logit row for prompt {prompt} at prefix {prefix:?}")]
    MissingRow { prompt: PromptId, prefix: Vec<u16> },

    #[error("parameter maps do not share the same key set")]
    KeyMismatch,

    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: |logit| = {magnitude:e} exceeds {limit:e}")]
    Divergence {
        step: usize,
        magnitude: f64,
        limit: f64,
    },

    #[error("no prompt admits a helpful context")]
    EmptyHelpfulSet,

    #[error("metric input is empty")]
    EmptyInput,

    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),

    #[error("record weight {0} must be finite and positive")]
    InvalidWeight(f64),

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("every transcript failed to produce a parsable confidence")]
    AllUnparsable,

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
