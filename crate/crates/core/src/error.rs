use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the core pipeline stages.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("config error: {0}")]
    Config(String),
    /// The dataset layout is unusable (no classes, an empty class, ...).
    #[error("dataset structure error: {0}")]
    Structural(String),
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("label error: {0}")]
    Label(String),
    /// Malformed metric inputs (length mismatch, out-of-range ids, empty matrix).
    #[error("input error: {0}")]
    Input(String),
    /// An operation was called before its prerequisite stage ran.
    #[error("state error: {0}")]
    State(String),
    #[error("environment error: {message} (hint: {hint})")]
    Environment { message: String, hint: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}

impl Error {
    /// True for errors caused by invalid user-supplied configuration or input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Structural(_) | Error::Label(_) | Error::Input(_)
        )
    }

    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
