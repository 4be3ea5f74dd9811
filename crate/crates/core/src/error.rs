use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch at layer {layer}: {detail}")]
    LayerShape { layer: usize, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss is not connected to any parameter")]
    Disconnected,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },

    #[error("environment contract violation: {0}")]
    EnvContract(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("level generation failed for {game} level {index} after {attempts} attempts")]
    LevelGeneration {
        game: String,
        index: u64,
        attempts: u32,
    },

    #[error("batch too small: need at least {needed}, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::LayerShape { .. } | Error::Shape(_) => "shape",
            Error::Disconnected => "disconnected",
            Error::NonFiniteGradient(_) | Error::NonFinite { .. } => "non_finite",
            Error::EnvContract(_) => "env_contract",
            Error::Protocol(_) => "protocol",
            Error::LevelGeneration { .. } => "level_generation",
            Error::BatchTooSmall { .. } => "batch_too_small",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
