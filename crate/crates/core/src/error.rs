use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate {class} id `{id}`")]
    DuplicateId { class: &'static str, id: String },

    #[error("layout has no {0}")]
    EmptyFacilityClass(&'static str),

    #[error("sensors must cover both aisles (cold: {cold}, hot: {hot})")]
    MissingAisleCoverage { cold: usize, hot: usize },

    #[error("{class} `{id}` has a non-finite position")]
    NonFinitePosition { class: &'static str, id: String },

    #[error("{class} `{first}` and `{second}` share a position")]
    DuplicatePosition {
        class: &'static str,
        first: String,
        second: String,
    },

    #[error("{facility} coincides with sensor `{sensor}`")]
    ZeroDistance { facility: String, sensor: String },

    #[error("every adjacency weight of sensor `{sensor}` fell below the cut threshold")]
    AllWeightsCut { sensor: String },

    #[error("flow rate at index {index} must be positive, got {value}")]
    NonPositiveFlowRate { index: usize, value: f64 },

    #[error("{what}: expected length {expected}, got {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("objective returned a non-finite value ({value}) at evaluation {evaluation}")]
    ObjectiveNonFinite { value: f64, evaluation: usize },

    #[error("zonal solve did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("external solver exited with {status}: {stderr}")]
    CommandFailed { status: String, stderr: String },

    #[error("external solver exceeded {seconds:.1}s")]
    Timeout { seconds: f64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown method `{0}` (expected kalibre, vanilla or heuristic)")]
    UnknownMethod(String),

    #[error("sample pool too small: {0}")]
    PoolTooSmall(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures raised by a solver backend rather than by the caller's data.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::CommandFailed { .. } | Error::Timeout { .. }
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
