use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("point {0:?} is not in the open domain")]
    NotInterior(Vec<f64>),

    #[error("TV quadrature failed: {0}")]
    QuadratureFailed(String),

    #[error("measure has atoms; mollify it before evaluating additive functionals")]
    AtomsPresent,

    #[error("no kernel; use Monte Carlo path estimator ({0})")]
    NoKernel(String),

    #[error("horizon too small: censored fraction {fraction:.3e} (limit {limit:.0e}) at horizon {horizon}")]
    HorizonTooSmall {
        fraction: f64,
        limit: f64,
        horizon: f64,
    },

    #[error("nonlinearity is not nonincreasing in u (monotonicity assumption A2 violated): {0}")]
    NotMonotone(String),

    #[error("Picard iteration did not converge after {iterations} iterations (last update {last:.3e}, tolerance {tolerance:.3e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        tolerance: f64,
        residuals: Vec<f64>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
