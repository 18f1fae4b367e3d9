use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("underdetermined fit: {grid} grid points for {dim} basis functions")]
    UnderdeterminedFit { grid: usize, dim: usize },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    /// The long-run covariance (or a scalar long-run variance) is not
    /// safely invertible.
    #[error(
        "singular long-run covariance: smallest eigenvalue {smallest:e}; \
         try a smaller number of components d"
    )]
    SingularLrv { smallest: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
