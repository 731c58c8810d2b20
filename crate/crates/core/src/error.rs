use thiserror::Error;

use crate::solver::PicardTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {what} needs {requested} nodes, cap is {cap}")]
    ResourceLimit {
        what: &'static str,
        requested: u128,
        cap: u128,
    },

    #[error("step size too large: kappa * dt = {product} must be < 1 (kappa = {kappa}, dt = {dt})")]
    StepSize { kappa: f64, dt: f64, product: f64 },

    #[error("implicit step did not converge at step {step} after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("regression at step {step} is ill-conditioned: {detail}")]
    Conditioning { step: usize, detail: String },

    #[error("Picard iteration is not contracting on an interval of length {interval_length}: ratios {ratios:?}; subdivide the horizon")]
    Divergence {
        interval_length: f64,
        ratios: Vec<f64>,
        trace: Box<PicardTrace>,
    },

    #[error("interval {index} [{start}, {end}]: {source}")]
    Interval {
        index: usize,
        start: f64,
        end: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Unwraps interval annotations down to the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Interval { source, .. } => source.root(),
            other => other,
        }
    }
}
