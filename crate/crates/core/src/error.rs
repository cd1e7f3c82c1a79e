use thiserror::Error;

/// Errors raised by the model, integrator, analysis and filter layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible reduced state: dissolved mass {dissolved} g exceeds total {total} g")]
    Infeasible { dissolved: f64, total: f64 },

    #[error("porosity exhausted: reconstructed alpha = {alpha}")]
    PorosityExhausted { alpha: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("integration failed at t = {t} s: {reason}")]
    Integration {
        t: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    #[error("perturbed simulation along direction {direction} failed: {source}")]
    Perturbation {
        direction: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Fisher matrix singular (condition number {condition:e}); weakest direction {weakest:?}")]
    Singular { condition: f64, weakest: Vec<f64> },

    #[error("trajectory shape: {0}")]
    Shape(String),

    #[error("covariance degenerate: {0}")]
    Covariance(String),

    #[error("measurement covariance degenerate: P_z = {0}")]
    Measurement(f64),

    #[error("sigma point {index} propagation failed: {source}")]
    SigmaPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: `{field}` {constraint}")]
    Config { field: String, constraint: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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
