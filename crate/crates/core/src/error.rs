use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("non-finite {what} in component {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("covariance matrix is not positive-definite")]
    Covariance,

    #[error("parameter {index} = {value} violates bound {bound}")]
    ParamDomain { index: usize, value: f64, bound: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        state: Vec<f64>,
        steps: usize,
    },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepBudget { max_steps: usize, t: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { best: Vec<f64>, iterations: usize },

    #[error("model is not structurally identifiable here (det g = {det:e})")]
    NotIdentifiable { det: f64 },

    #[error("confidence region is unbounded along direction {direction:?} (practical non-identifiability)")]
    PracticalNonIdentifiability { direction: Vec<f64> },

    #[error("parameter domain reached at {theta:?} before the boundary (statistic {stat} < {threshold})")]
    DomainTruncation {
        theta: Vec<f64>,
        stat: f64,
        threshold: f64,
    },

    #[error("found a point with higher likelihood than the MLE ({ell} > {ell_mle}); the MLE is invalid")]
    BetterPointFound { ell: f64, ell_mle: f64 },

    #[error("log-likelihood gradient is singular at {theta:?}")]
    SingularGradient { theta: Vec<f64> },

    #[error("boundary curve did not close: {0}")]
    NotClosed(String),

    #[error("band refused: {0}")]
    BandRefused(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error: {0}")]
    Parse(String),

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
