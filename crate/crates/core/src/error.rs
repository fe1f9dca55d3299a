use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("cavity violates the 2h clearance from the outer boundary (distance {distance:.6}, required {required:.6})")]
    ClearanceViolation { distance: f64, required: f64 },
    #[error("cavity contains no grid node")]
    EmptyCavity,
    #[error("fluid region is disconnected ({reached} of {total} fluid nodes reachable)")]
    DisconnectedFluid { reached: usize, total: usize },
    #[error("parameter vector has length {got}, parameterization expects {expected}")]
    BadArity { expected: usize, got: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("operator hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("observation subboundary contains no grid node")]
    EmptyGamma,
    #[error("source specification not validated: {0}")]
    UnvalidatedSpec(String),
    #[error("source support is closer than two nodes to a non-fluid node")]
    SupportTooClose,
    #[error("lift collar overlaps a candidate cavity")]
    CollarOverlapsCavity,
    #[error("linear solver failed: {0}")]
    SolverDiverged(String),
    #[error("breakpoint t = {time} is not aligned with the time grid (dt = {dt})")]
    BreakpointMisaligned { time: f64, dt: f64 },
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
    #[error("region is incompatible with the observation kind: {0}")]
    RegionKindMismatch(String),
    #[error("observations do not match: {0}")]
    ShapeMismatch(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("missing reference: {0}")]
    MissingReference(String),
    #[error("sweep axis {0:?} does not name a numeric config value")]
    BadAxis(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
