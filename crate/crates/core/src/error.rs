use thiserror::Error;

/// Errors raised by the engine. Variants mirror the failure classes of the
/// public operations; messages carry enough context to act on.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("frequency tuple violates the constraint: {0}")]
    InvalidTuple(String),

    #[error("inconsistent index function: {0}")]
    InvalidIndex(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("node {0} is not terminal")]
    NotTerminal(usize),

    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),

    #[error("equation mismatch: {0}")]
    EquationMismatch(String),

    #[error("unsupported lemma: {0}")]
    UnsupportedLemma(String),

    #[error("fit undefined: {0}")]
    FitUndefined(String),

    #[error("time mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("Picard iteration failed to contract after {iterations} iterations (residuals {residuals:?})")]
    NoContraction { iterations: usize, residuals: Vec<f64> },

    #[error("reference integrator blew up at t = {time}: norm grew from {before:e} to {after:e}")]
    Blowup { time: f64, before: f64, after: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
