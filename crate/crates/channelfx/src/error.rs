//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A spec or config failed validation. `pointer` is a JSON-pointer-like
    /// path into the offending document ("/spec/w", "/grid/n_u", ...).
    #[error("validation error at {pointer}: {message}")]
    Validation { pointer: String, message: String },

    /// A coordinate fell outside the declared parameter domain.
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Two objects that must share a grid do not.
    #[error("grid mismatch in {context}: expected {expected}, got {got}")]
    GridMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A quadrature or update produced a non-finite value.
    #[error("non-finite value in {location}")]
    NonFinite { location: String },

    /// An operation precondition does not hold (monotonicity, level counts, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A time-stepping or sampling parameter is out of its stable range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The metric degenerated while assembling the discrete operator.
    #[error("degenerate metric at cell ({i}, {j}): det g = {det_g}")]
    Assembly { i: usize, j: usize, det_g: f64 },

    /// The gradient vanished where the generating field needs to divide by it.
    #[error("vanishing gradient at cell ({i}, {j})")]
    Singularity { i: usize, j: usize },

    /// The iterative solver ran out of iterations. Carries the best iterate.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// The 1-D reduction broke down (vanishing section flux).
    #[error("invalid reduction: {0}")]
    InvalidReduction(String),

    /// A particle left the channel and reflection could not recover it.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
