use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] oasis_core::Error),
    #[error("tensor backend: {0}")]
    Candle(#[from] candle_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("sequence {sequence}: {message}")]
    Dataset { sequence: String, message: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration} (diagnostics in {dump})")]
    NonFiniteLoss { iteration: usize, dump: PathBuf },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the failure was caused by bad user input rather than a bug or
    /// numeric breakdown.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Core(_)
            | Error::Io { .. }
            | Error::Format { .. }
            | Error::Dataset { .. }
            | Error::Input(_)
            | Error::Config(_) => true,
            Error::Candle(_) | Error::NonFiniteLoss { .. } => false,
        }
    }
}

impl<E: std::fmt::Display> From<oasis_core::memory::MemoryError<E>> for Error {
    fn from(e: oasis_core::memory::MemoryError<E>) -> Self {
        Error::Input(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
