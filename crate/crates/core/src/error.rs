use thiserror::Error;

/// Errors raised by graph construction, filtering, analysis and design.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "random geometric graph with n={n}, side={side}, radius={radius} still disconnected after {attempts} attempts"
    )]
    Disconnected {
        n: usize,
        side: f64,
        radius: f64,
        attempts: usize,
    },

    #[error("graph is disconnected ({components} components); {hint}")]
    DisconnectedGraph { components: usize, hint: String },

    #[error("node {0} is isolated; the normalized Laplacian is undefined")]
    IsolatedNode(usize),

    #[error("missing shift parameter: {0}")]
    MissingParameter(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("power iteration did not converge in {iterations} iterations (last estimate {last_estimate})")]
    NoConvergence {
        iterations: usize,
        last_estimate: f64,
        last_iterate: Vec<f64>,
    },

    #[error("unstable filter: psi_max * bound = {product} must stay below 1")]
    Unstable { product: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("design precondition violated: {0}")]
    Design(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
