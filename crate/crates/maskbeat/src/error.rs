use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] maskbeat_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Malformed pattern, dataset or request document; `field` names the culprit.
    #[error("{context}: {field}: {message}")]
    Format { context: String, field: String, message: String },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(context: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { context: context.into(), field: field.into(), message: message.into() }
    }

    /// 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        use maskbeat_core::Error as C;
        match self {
            Error::Usage(_) | Error::Core(C::Config(_) | C::Request(_)) => 1,
            Error::Core(C::NonFiniteLoss { .. }) => 3,
            Error::Core(_) | Error::Io { .. } | Error::Format { .. } | Error::Checkpoint { .. } => 2,
        }
    }
}
