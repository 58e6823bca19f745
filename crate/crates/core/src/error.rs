use std::path::PathBuf;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    MalformedHeader { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate index record (prompt_id={prompt_id}, seed={seed}, token_position={token_position})")]
    DuplicateKey {
        prompt_id: String,
        seed: u64,
        token_position: u32,
    },

    #[error("trace validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad data rather than bad numerics or I/O.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader { .. }
                | Error::DimensionMismatch(_)
                | Error::DuplicateKey { .. }
                | Error::Validation(_)
                | Error::InvalidInput(_)
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
