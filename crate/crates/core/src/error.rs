use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is not inside the body")]
    NotInterior,

    /// A matrix that must be invertible is (numerically) singular. `direction`
    /// is the eigenvector of the smallest eigenvalue.
    #[error("singular matrix (min eigenvalue {min_eigenvalue:.3e}) along direction {direction:?}")]
    Singular {
        min_eigenvalue: f64,
        direction: Vec<f64>,
    },

    #[error("chord computation failed: {0}")]
    Chord(String),

    /// Monte Carlo estimation failed at runtime (variance blow-up, disjoint supports, ...).
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("separation oracle is inconsistent: {0}")]
    OracleInconsistent(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Input errors map to exit code 1 in the harness, everything else to 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. } | Error::InvalidInput(_) | Error::NotInterior
        )
    }
}
