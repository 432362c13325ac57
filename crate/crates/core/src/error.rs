use thiserror::Error;

/// Errors surfaced by model construction, oracle solves and the harness.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid action {action} in state {state}")]
    InvalidAction { state: usize, action: usize },

    #[error("model validation failed: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("multichain structure detected: {0}; only unichain MDPs are supported")]
    Multichain(String),

    #[error("discount factor {0} outside the supported range")]
    BadDiscount(f64),

    #[error("fixed-point iteration diverged: {0}")]
    Divergence(String),

    #[error(
        "policy space has {actual} deterministic policies, exceeding cap {cap}; \
         use a structured family (e.g. control-limit policies) instead of full enumeration"
    )]
    PolicySpaceTooLarge { actual: u128, cap: u128 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment spec `{0}` not recognised: {1}")]
    EnvSpec(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
