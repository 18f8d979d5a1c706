use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("canonical point {index} has zero total responsibility")]
    DegenerateCorrespondence { index: usize },

    #[error("warped orientation basis is degenerate")]
    DegenerateBasis,

    #[error("total kernel weight {weight:e} too small for inverse deformation")]
    VanishingSupport { weight: f64 },

    #[error("sampling bounds unsatisfiable after {attempts} rejections")]
    RejectionLimit { attempts: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("registration of instance `{id}` failed: {source}")]
    Registration {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed model file: {0}")]
    Model(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. } | Error::Invalid(_) | Error::Model(_) => ErrorKind::Validation,
            Error::RejectionLimit { .. } => ErrorKind::Validation,
            Error::DegenerateCorrespondence { .. }
            | Error::DegenerateBasis
            | Error::VanishingSupport { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Registration { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
