use thiserror::Error;

/// Errors raised by model construction, evaluation, proximal steps, solvers and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("discount factor {0} outside (0, 1)")]
    Discount(f64),
    #[error("transition row for (s={s}, a={a}) is not a distribution: {reason}")]
    TransitionRow { s: usize, a: usize, reason: String },
    #[error("cost for (s={s}, a={a}) violates the cost bound {bound}")]
    CostBound { s: usize, a: usize, bound: f64 },
    #[error("policy row {s} is not an interior distribution: {reason}")]
    PolicyRow { s: usize, reason: String },
    #[error("distribution has zero mass where the reference is positive")]
    Support,
    #[error("regularizer: {0}")]
    Regularizer(String),
    #[error("linear system is singular or ill-conditioned (residual {0:e})")]
    Singular(f64),
    #[error("Markov chain is not irreducible")]
    Reducible,
    #[error("Markov chain is periodic (second eigenvalue modulus {0})")]
    Periodic(f64),
    #[error("invalid step size or parameter: {0}")]
    Parameter(String),
    #[error("schedule incompatible with solver: {0}")]
    Schedule(String),
    #[error("value oracle cannot certify the requested accuracy: {0}")]
    Certification(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, PmdError>;
