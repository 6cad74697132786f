use thiserror::Error;

use crate::dataio::DataIoError;
use crate::em::{EmError, RefractionError};
use crate::scene::SceneError;
use crate::solver::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Refraction(#[from] RefractionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    DataIo(#[from] DataIoError),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor of {elements} elements exceeds the {limit} element allocation limit")]
    TooLarge { elements: u128, limit: u128 },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("empty target list")]
    NoTargets,
    #[error("image is empty")]
    EmptyImage,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

impl Error {
    pub(crate) fn dims(expected: &[usize], actual: &[usize]) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
