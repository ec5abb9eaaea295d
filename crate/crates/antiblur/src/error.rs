use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid extents disagree or are invalid for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A file did not parse under its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// The file parsed but its payload is unusable (NaN, length mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// A configuration or phantom parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The input is degenerate for the requested statistic
    /// (e.g. a constant image under global correlation).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The optimizer produced a non-finite loss.
    #[error("divergence at stage {stage}, iteration {iteration}")]
    Divergence { stage: usize, iteration: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 I/O and data problems, 2 divergence,
    /// 3 degenerate input, 64 usage/parameter.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 2,
            Error::Degenerate(_) => 3,
            Error::Parameter(_) => 64,
            _ => 1,
        }
    }
}
