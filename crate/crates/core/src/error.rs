use bipo_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("stage `{stage}` requires `{needs}` to have run first")]
    MissingStage { stage: String, needs: String },

    #[error("stage `{stage}` is stale: {reason}")]
    StaleStage { stage: String, reason: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("non-finite metric: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }

    /// Short machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            CoreError::Tensor(_) => "tensor",
            CoreError::Io { .. } => "io",
            CoreError::Parse(_) => "parse",
            CoreError::Invalid(_) => "invalid_input",
            CoreError::MissingStage { .. } => "missing_stage",
            CoreError::StaleStage { .. } => "stale_stage",
            CoreError::Divergence(_) => "divergence",
            CoreError::NonFinite(_) => "non_finite",
            CoreError::Numeric(_) => "numeric",
        }
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Parse(e.to_string())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| CoreError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, bytes).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })
}
