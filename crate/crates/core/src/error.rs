use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The EGOP estimate is the zero matrix, so no transform can be normalized
    /// from it. Usually means the fitted estimator is constant.
    #[error("degenerate EGOP estimate: L2,1 norm is zero")]
    DegenerateEgop,

    #[error("rank-deficient basis: numerical rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::InvalidParameter(_) => "parameter",
            Error::DegenerateEgop => "degenerate_egop",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Empty(_) => "empty_input",
            Error::Parse { .. } | Error::MissingColumn(_) | Error::Csv(_) => "data",
            Error::Format(_) | Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
