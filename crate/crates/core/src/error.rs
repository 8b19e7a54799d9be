use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no convergence after {iterations} iterations (last iterate {last})")]
    NoConvergence { iterations: usize, last: f64 },

    #[error("level set is empty: level {level} is below model minimum {nu}")]
    LevelSetEmpty { level: f64, nu: f64 },

    #[error("feasible set is empty")]
    Infeasible,

    #[error("matrix is rank deficient (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },

    #[error("matrix is not invertible (sigma_min = {sigma_min:e})")]
    NotInvertible { sigma_min: f64 },

    #[error("certificate has no maximizer close to 1")]
    EmptySupport,

    #[error("certificate curvature {0} is not negative")]
    InvalidCurvature(f64),

    #[error("need at least {needed} samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("perturbation radius too large: denominator margin {margin:e}")]
    RadiusTooLarge { margin: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
