use thiserror::Error;

/// Errors produced by the library.
///
/// Everything except [`Error::Invariant`] is a problem with caller input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x}, {y}, {w}, {h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },

    #[error("invalid IoU threshold {0}: must satisfy 0 < t < 1")]
    InvalidThreshold(f64),

    #[error("invalid stride {0}: must be finite and > 0")]
    InvalidStride(f64),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("proposals reference unknown image id `{0}`")]
    UnknownImage(String),

    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),

    #[error("image `{image_id}`: {reason}")]
    InvalidImage { image_id: String, reason: String },

    #[error("{location}: {rule}")]
    Parse { location: String, rule: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            rule: rule.into(),
        }
    }

    /// True when the error is caused by an internal invariant failure rather
    /// than by the caller's input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
