use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("singular pencil: right-hand matrix is not positive definite")]
    SingularPencil,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("system is not mean-square stable (moment radius {moment_radius})")]
    NotMeanSquareStable { moment_radius: f64 },

    #[error("not stabilizable: {0}")]
    Unstabilizable(String),

    #[error("grid of {points} points exceeds the limit of {limit}; use fewer samples per direction")]
    GridTooLarge { points: u128, limit: u128 },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
