use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing or out of range. `field` is the
    /// dotted path of the offending entry.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("proposal density is {value} at an in-support point ({context})")]
    BrokenProposal { value: f64, context: String },

    #[error("non-finite particle position at iteration {iteration} (particle {particle})")]
    NonFinitePosition { iteration: u64, particle: usize },

    #[error("rejection sampler acceptance rate {rate:.3e} is below 1e-6")]
    RejectionTooLoose { rate: f64 },

    #[error("proposal disjoint from target support: all importance weights are zero")]
    DegenerateWeights,

    #[error("grid operator produced a negative cell value {value:.3e} at cell {cell}")]
    NegativeMass { cell: usize, value: f64 },

    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Json { .. })
    }
}
