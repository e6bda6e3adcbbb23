use thiserror::Error;

/// Errors raised across the estimation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("relative rotation too close to pi ({angle:.6} rad); re-anchor the local frame")]
    NearPiRotation { angle: f64 },
    #[error("time step must be strictly positive, got {0}")]
    NonPositiveDt(f64),
    #[error("query time {tau} outside segment (0, {dt})")]
    QueryOutOfSegment { tau: f64, dt: f64 },
    #[error("empty measurement stream")]
    EmptyStream,
    #[error("timestamps not monotone at index {0}")]
    NonMonotoneTime(usize),
    #[error("bias moved {0:.4} away from the preintegration linearization point")]
    StaleBiasLinearization(f64),
    #[error("degenerate satellite geometry: {0}")]
    DegenerateGeometry(String),
    #[error("graph has no initial state")]
    NotInitialized,
    #[error("measurement cache for {sensor} overflowed, {evicted} evicted")]
    BufferOverflow { sensor: String, evicted: usize },
    #[error("solver diverged: cost {cost:.6e} could not be reduced")]
    SolverDiverged { cost: f64 },
    #[error("need at least 3 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
