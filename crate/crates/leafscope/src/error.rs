use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] leafscope_core::Error),
    /// A required file or directory is missing.
    #[error("path error: {}: {message}", path.display())]
    Path { path: PathBuf, message: String },
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file exists but its contents do not parse.
    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Core(e) => e.is_validation(),
            Error::Path { .. } | Error::Usage(_) => true,
            Error::Io { .. } | Error::Format { .. } => false,
        }
    }

    /// 1 for validation errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Core(leafscope_core::Error::Config(message.into()))
    }

    pub(crate) fn input(message: impl Into<String>) -> Self {
        Error::Core(leafscope_core::Error::Input(message.into()))
    }
}
