use thiserror::Error;

/// Errors raised by the library.
///
/// The variants follow the failure classes used throughout the crate so the
/// CLI can map them onto exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or parameter outside the admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The model itself is invalid at some location (non-SPD metric, non-finite density).
    #[error("model error: {0}")]
    Model(String),

    /// A numerical procedure failed (step rejection, non-convergence, non-finite energy).
    #[error("numeric error in {stage}: {message}")]
    Numeric { stage: String, message: String },

    /// A generic-path minimization that did not converge; carries the best value found.
    #[error("fiber minimization did not converge after {restarts} restarts (best value {best_value})")]
    NotConverged { restarts: usize, best_value: f64, best_point: Vec<f64> },

    /// The caller combined arguments that do not fit together.
    #[error("usage error: {0}")]
    Usage(String),

    /// Boundary or input data that cannot be evaluated.
    #[error("data error: {0}")]
    Data(String),

    /// A request that would exceed a fixed capacity.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Configuration rejected by schema or semantic validation.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A verification battery failed.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric { stage: stage.into(), message: message.into() }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    /// Process exit code: 2 for bad input, 3 for failures while computing, 4 for failed verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } | Error::Usage(_) | Error::Data(_) | Error::Capacity(_) | Error::Json(_) => 2,
            Error::Domain(_) | Error::Model(_) | Error::Numeric { .. } | Error::NotConverged { .. } | Error::Io(_) => 3,
            Error::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
