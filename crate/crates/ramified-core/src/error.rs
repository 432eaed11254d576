use thiserror::Error;

/// Errors surfaced by graph construction, assembly and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A fractal substitution description failed validation.
    #[error("invalid fractal spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },

    /// Two values that must live on the same level graph do not.
    #[error("operands live on different graphs ({left} vs {right})")]
    GraphMismatch { left: String, right: String },

    /// A vector or table has the wrong length for its graph.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The operation requires a connected graph.
    #[error("graph is disconnected: {0}")]
    Disconnected(String),

    /// A reference measure must charge every vertex positively.
    #[error("measure is not strictly positive at vertex {vertex} (value {value})")]
    NonPositiveMeasure { vertex: usize, value: f64 },

    /// A solver precondition does not hold for the given data.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A built-in consistency check failed after a solve.
    #[error("verification failed: {0}")]
    Verification(String),

    /// A linear system could not be factored.
    #[error("singular linear system: {0}")]
    Singular(String),

    /// The iterative eigensolver stopped without meeting its residual target.
    #[error(
        "eigensolver did not converge: residual {residual:.3e} after {iterations} iterations \
         (tolerance {tolerance:.3e})"
    )]
    EigenNonConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV or config text that does not parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
