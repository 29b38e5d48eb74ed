use thiserror::Error;

/// Errors shared by the numerical layers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid argument or violated precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A covariance update lost positive definiteness. Carries the index of
    /// the failing Cholesky pivot (or mixture component, depending on the
    /// calling context).
    #[error("degenerate covariance (pivot/component {index})")]
    DegenerateCovariance { index: usize },

    /// The implicit linear system `I - dF/dtheta` is numerically singular,
    /// signalling a degenerate fixed point.
    #[error("singular implicit system (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },

    /// An iterative solver exhausted its iteration budget. Carries the last
    /// primal value and transport plan if one was produced.
    #[error("solver did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last_value: f64,
        last_plan: Option<ndarray::Array2<f64>>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
