use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node budget of {budget} exceeded")]
    BudgetExceeded { budget: usize },

    #[error("posterior tail not resolved: residual mass {residual:e} above {threshold:e} with {front} members enumerated")]
    TailNotResolved {
        residual: f64,
        threshold: f64,
        front: usize,
    },

    #[error(
        "every environment in the class assigns probability zero to the percept observed at t={t}"
    )]
    ZeroLikelihood { t: usize },

    #[error("effective horizon undefined at t={t}: discount tail is zero")]
    UndefinedHorizon { t: usize },

    #[error("discount weight is zero at t={t}")]
    ZeroDiscount { t: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
