use thiserror::Error;

/// Errors produced by the tagger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed label {label:?}: {reason}")]
    MalformedLabel { label: String, reason: &'static str },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot allocate {states} hidden states over {labels} labels")]
    InfeasibleAllocation { states: usize, labels: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no feasible path through the lattice")]
    InfeasibleDecode,

    #[error("gold sequence is infeasible under the transition constraints")]
    InfeasibleGold,

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
