use thiserror::Error;

use crate::graph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("network violates connectivity assumptions: {0}")]
    Validation(Violation),

    #[error("state blew up at step {step} (t = {time}): agent {agent}, order {order}, value {value:e}")]
    BlowUp {
        step: usize,
        time: f64,
        agent: usize,
        order: usize,
        value: f64,
    },

    #[error("gain hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
