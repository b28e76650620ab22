use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference field has zero norm")]
    DegenerateReference,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("length mismatch in {path}: expected {expected} values, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{solver} did not converge after {} iterations (final residual {:.3e})",
        .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    SolverFailure {
        solver: &'static str,
        residuals: Vec<f64>,
    },

    #[error("time step failed at t = {time:.6} s: {msg}")]
    StepFailure { time: f64, msg: String },

    #[error("parametric coordinate {value} outside knot range [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("deformation tangles the mesh: cell {cell} has volume {volume:.3e}")]
    InvalidDeformation { cell: usize, volume: f64 },

    #[error("configuration error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("ill-posed configuration: {0}")]
    Configuration(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

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

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
