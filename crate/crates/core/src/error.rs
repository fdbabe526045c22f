use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{kind} label {label} out of range [0, {classes}) at {location}")]
    LabelOutOfRange {
        kind: &'static str,
        label: usize,
        classes: usize,
        location: String,
    },

    #[error("utterance too short: {got} frames, need at least {required}")]
    TooShort { required: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{0}")]
    Mode(String),

    #[error("{0}")]
    Data(String),

    #[error("no parameter named `{0}`")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}

impl Error {
    /// Process exit code: 1 configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Mode(_) | Error::UnknownParameter(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
