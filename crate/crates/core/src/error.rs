use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache does not match the network: {0}")]
    StaleCache(&'static str),
    #[error("training diverged: non-finite value in {0}")]
    Divergence(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("empty data set")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("autoencoder must be frozen before it is used as a reference")]
    NotFrozen,
    #[error("linear system is singular beyond jitter rescue")]
    Singular,
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape { context, expected, got }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Numeric failures (divergence, singular systems, undefined metrics)
    /// as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence(_) | Error::Singular | Error::UndefinedMetric(_))
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(context, expected, got))
    }
}
