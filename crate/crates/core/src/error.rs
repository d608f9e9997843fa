use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A vector or matrix did not have the expected length.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// The caller violated a precondition.
    #[error("invalid usage: {0}")]
    Usage(String),
    /// A text record could not be parsed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    /// A metric is undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),
    /// `step` was called on an episode that already terminated.
    #[error("episode already finished")]
    EpisodeFinished,
    /// Every action is masked out.
    #[error("no selectable action: every entry of the mask is zero")]
    AllMasked,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            found,
        })
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
