//! Error type shared across the engine.
//!
//! Exit-code mapping for the CLI lives here so library and binary cannot
//! drift: validation/dimension/coverage problems exit 2, malformed or
//! truncated files exit 3, I/O failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("validation: {0}")]
    Validation(String),

    /// Shapes that must agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A class required by an operation has no examples.
    #[error("class {0} has no examples")]
    MissingClass(usize),

    /// A stored file failed structural validation. `offset` is the byte
    /// position at which parsing stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Dimension(_) | Error::MissingClass(_) => 2,
            Error::Format { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_by_kind() {
        assert_eq!(Error::Validation("x".into()).exit_code(), 2);
        assert_eq!(Error::Dimension("x".into()).exit_code(), 2);
        assert_eq!(Error::MissingClass(3).exit_code(), 2);
        assert_eq!(
            Error::Format {
                offset: 8,
                message: "bad magic".into()
            }
            .exit_code(),
            3
        );
        let io = Error::from(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(io.exit_code(), 4);
    }

    #[test]
    fn format_error_reports_offset() {
        let err = Error::Format {
            offset: 22,
            message: "count overflows payload".into(),
        };
        let shown = err.to_string();
        assert!(shown.contains("byte 22"));
        assert!(shown.contains("count overflows payload"));
    }
}
