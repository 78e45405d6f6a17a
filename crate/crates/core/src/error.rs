use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The rank test and the kernel-product test of the existence condition
    /// returned different verdicts for the same tolerance.
    #[error(
        "kernel-inclusion tests disagree (rank test: {rank_test}, kernel product test: {product_test}, \
         max |X_f N| = {residual:e}); tolerances are inconsistent with the data scale"
    )]
    ToleranceInconsistency {
        rank_test: bool,
        product_test: bool,
        residual: f64,
    },

    #[error("historical data is not persistently exciting after {attempts} attempt(s)")]
    NotExciting { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels (SVD, eigenvalues, exponential).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::ToleranceInconsistency { .. }
        )
    }
}
