use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error("non-finite sample value at {location}")]
    NonFinite { location: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("window [{start}, {end}) lies outside a trace of {len} samples")]
    WindowOutOfBounds { start: usize, end: usize, len: usize },

    #[error("cannot classify settings: {0}")]
    Classification(String),

    #[error("missing statistic for pattern `{0}`")]
    MissingPattern(String),

    #[error("incomplete correlation model: {0}")]
    IncompleteModel(String),

    #[error("quadrature did not converge within {nodes} nodes (last relative change {change:e})")]
    Quadrature { nodes: usize, change: f64 },

    #[error("inconsistent observations: {0}")]
    InconsistentGains(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("solver failure: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn malformed(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from the numerical back ends rather than from
    /// the data handed to them.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. } | Error::Infeasible | Error::Unbounded | Error::Solver(_)
        )
    }
}
