use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input value lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an ordering or shape contract (unsorted splats,
    /// mismatched forward state, mismatched dimensions).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Payload could not be parsed at all. Distinct from invariant
    /// violations, which `validate_dataset` reports without failing.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("nothing to map: dataset has no masks")]
    NothingToMap,

    #[error("no supervised pixels")]
    NoSupervisedPixels,

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("unknown view {0}")]
    UnknownView(usize),

    #[error("empty lattice")]
    EmptyLattice,
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
