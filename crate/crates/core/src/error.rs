use thiserror::Error;

use crate::comm_graph::EntityId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("matrix is not Hurwitz (largest eigenvalue real part {0:e})")]
    NotHurwitz(f64),

    #[error("linear system is ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("lambda {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("ellipsoid centers coincide")]
    CoincidentCenters,

    #[error("bad projection indices ({0}, {1}) for dimension {2}")]
    BadIndices(usize, usize, usize),

    #[error("projected shape matrix is singular")]
    SingularShape,

    #[error("direction towards target point is degenerate")]
    DegenerateDirection,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("initial setpoints of agents {0} and {1} intersect")]
    UnsafeInitialConfiguration(usize, usize),

    #[error("unknown entity {0:?}")]
    UnknownEntity(EntityId),

    #[error("could not place entities after {0} attempts")]
    PlacementFailure(usize),

    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite TD loss at update {update}: {detail}")]
    NonFiniteLoss { update: u64, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("replay diverged at step {step}: {detail}")]
    DivergenceAt { step: usize, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
