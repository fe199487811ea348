use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:.3e})")]
    EigenNotConverged {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("requested {requested} eigenpairs but the mesh only supports {available}")]
    TooManyEigenpairs { requested: usize, available: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("optimization diverged: {reason}")]
    Diverged { reason: String, trace: Vec<f64> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid rig: {0}")]
    Rig(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 configuration, 3 input, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Rig(_) => 2,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::InvalidMesh(_)
            | Error::Empty(_)
            | Error::Dimension(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
