use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error in {}: {message}", file.display())]
    Schema { file: PathBuf, message: String },

    #[error("window rejected: {0}")]
    WindowRejected(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("diffusion step {step} out of range 1..={max}")]
    Step { step: usize, max: usize },

    #[error("non-finite value at {context}")]
    Numeric { context: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("model container: {0}")]
    Container(String),

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
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
