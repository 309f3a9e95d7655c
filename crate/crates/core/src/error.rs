use thiserror::Error;

/// Errors raised by the estimation and bounding pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A power `λ^k` left the finite `f64` range.
    #[error("overflow computing power {power} of eigenvalue {value}")]
    Overflow { power: usize, value: f64 },

    /// Newton's identities lost too many digits to alternating cancellation.
    #[error("cancellation in Newton identities at order {order} (relative loss {loss:.3e})")]
    Cancellation { order: usize, loss: f64 },

    #[error("no restart reached moment residual {tol:e} (best {best:e})")]
    Infeasible { tol: f64, best: f64 },

    #[error("solver stalled after {restarts} restarts")]
    SolverStalled { restarts: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("quantity undefined: {0}")]
    Undefined(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
