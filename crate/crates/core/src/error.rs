use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Rejected-input errors raised by the core primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {0} is not in the object id set")]
    UnknownLabel(u8),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("frame {height}x{width} is smaller than the {support}-pixel smoothing kernel")]
    FrameTooSmall {
        height: usize,
        width: usize,
        support: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
}
