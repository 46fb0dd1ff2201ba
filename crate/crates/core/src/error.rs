use thiserror::Error;

/// Crate-level error that any module error converts into.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] crate::numlin::LinalgError),
    #[error(transparent)]
    System(#[from] crate::systems::SystemError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Koopman(#[from] crate::koopman::KoopmanError),
    #[error(transparent)]
    Continuous(#[from] crate::continuous::ContinuousError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
