use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{op} is not supported for the {family} family")]
    UnsupportedFamily {
        op: &'static str,
        family: &'static str,
    },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    /// A hypothesis of one of the asymptotic results does not hold for the model.
    #[error("hypothesis violated [{hypothesis}]: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn hypothesis(hypothesis: &'static str, detail: impl Into<String>) -> Error {
    Error::Hypothesis {
        hypothesis,
        detail: detail.into(),
    }
}
