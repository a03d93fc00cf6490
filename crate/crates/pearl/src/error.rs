use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("missing {artifact}; run `pearl {producer}` first")]
    Dependency { artifact: PathBuf, producer: &'static str },
    #[error("data: {0}")]
    Data(String),
    #[error("training: {0}")]
    Training(String),
    #[error("intent: {0}")]
    Intent(String),
    #[error("evaluation: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, line: usize, message: impl std::fmt::Display) -> Error {
        Error::Format { path: path.to_path_buf(), line, message: message.to_string() }
    }

    /// Process exit code, distinct per error class. Bad arguments exit 64.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Format { .. } => 4,
            Error::Dependency { .. } => 5,
            Error::Data(_) => 6,
            Error::Training(_) => 7,
            Error::Intent(_) => 8,
            Error::Eval(_) => 9,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Error {
                Error::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    pearl_core::corpus::CorpusError,
    pearl_core::embed::EmbedError,
    pearl_core::quantize::QuantizeError,
    pearl_core::index::IndexError,
    pearl_core::retrieve::RetrieveError
);

impl From<pearl_core::userrep::UserRepError> for Error {
    fn from(e: pearl_core::userrep::UserRepError) -> Error {
        Error::Training(e.to_string())
    }
}

impl From<pearl_core::seqmodel::SeqError> for Error {
    fn from(e: pearl_core::seqmodel::SeqError) -> Error {
        Error::Training(e.to_string())
    }
}

impl From<pearl_core::intent::IntentError> for Error {
    fn from(e: pearl_core::intent::IntentError) -> Error {
        Error::Intent(e.to_string())
    }
}

impl From<pearl_core::evalsim::EvalError> for Error {
    fn from(e: pearl_core::evalsim::EvalError) -> Error {
        Error::Eval(e.to_string())
    }
}
