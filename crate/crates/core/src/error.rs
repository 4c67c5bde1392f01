use thiserror::Error;

/// Errors raised by the needlet library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is not a unit vector (norm {norm})")]
    NotUnitVector { norm: f64 },

    #[error("degree {degree} exceeds the supported cap {cap}")]
    DegreeTooLarge { degree: usize, cap: usize },

    #[error("multiplicity overflows at degree {degree}, dimension {dim}")]
    MultiplicityOverflow { degree: usize, dim: usize },

    #[error("Gauss-Legendre root finding did not converge for {0} points")]
    QuadratureNoConvergence(usize),

    #[error("integrand is not finite at node {0}")]
    NonFiniteIntegrand(usize),

    #[error("band ratio must exceed 1, got {0}")]
    InvalidBandRatio(f64),

    #[error("needlet index out of range: level {level}, node {node}")]
    IndexOutOfRange { level: usize, node: usize },

    #[error("resolution level {level} exceeds the frame cap {cap}")]
    LevelAboveCap { level: usize, cap: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("rejection sampler acceptance rate {rate:.2e} is below 1e-3")]
    LowAcceptance { rate: f64 },

    #[error("sample too small: need at least {needed} points, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("estimates do not match the resolution grid: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
