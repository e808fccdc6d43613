use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("path {path} blew up at step {step} (t = {t}, x = {x:?})")]
    PathBlowup {
        path: usize,
        step: usize,
        t: f64,
        x: Vec<f64>,
    },

    #[error("diffusion matrix is singular at t = {t}, x = {x:?}")]
    WeightSingularity { t: f64, x: Vec<f64> },

    #[error("cannot build a partition from an empty point cloud")]
    EmptyCloud,

    #[error("non-finite nonlinearity at t = {t}, x = {x:?}")]
    NonFiniteNonlinearity { t: f64, x: Vec<f64> },

    #[error("quadrature rule too coarse: weights sum to {sum}")]
    QuadratureTooCoarse { sum: f64 },

    #[error("invalid lattice: up-probability {p} outside (0, 1)")]
    InvalidLattice { p: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("structural assumptions failed: {0}")]
    AssumptionsFailed(String),

    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Dimension(_)
                | Error::UnknownProblem(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }

    /// Short machine-readable code used in result files.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Dimension(_) => "dimension",
            Error::PathBlowup { .. } => "path_blowup",
            Error::WeightSingularity { .. } => "weight_singularity",
            Error::EmptyCloud => "empty_cloud",
            Error::NonFiniteNonlinearity { .. } => "nonfinite_nonlinearity",
            Error::QuadratureTooCoarse { .. } => "quadrature_too_coarse",
            Error::InvalidLattice { .. } => "invalid_lattice",
            Error::InsufficientData(_) => "insufficient_data",
            Error::AssumptionsFailed(_) => "assumptions_failed",
            Error::UnknownProblem(_) => "unknown_problem",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
