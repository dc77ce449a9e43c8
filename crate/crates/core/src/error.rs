use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("offset {offset} is not a grid node")]
    Alignment { offset: f64 },

    #[error("degenerate stencil offsets: {0}")]
    DegenerateOffsets(String),

    #[error("operator was assembled for a {expected} grid but the grid is {found}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("singular matrix: zero pivot in row {row}")]
    Singular { row: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("exercise boundary left (0, E]: s_f = {s_f}")]
    BoundaryEscape { s_f: f64 },

    #[error("step size stagnated at tau = {tau} (k = {k})")]
    Stagnation { tau: f64, k: f64 },

    #[error("projected SOR did not converge within {iterations} iterations")]
    SorNonConvergence { iterations: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
