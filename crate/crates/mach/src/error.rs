use std::io;

/// Errors produced by the library. Variants map onto the CLI exit-code
/// classes: config/argument problems are usage errors, validation and parse
/// problems are data errors, format and io problems are I/O errors.
#[derive(Debug, thiserror::Error)]
pub enum MachError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, MachError>;
