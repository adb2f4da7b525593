use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty arm: {0}")]
    EmptyArm(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("too few units: {0}")]
    TooFew(String),

    #[error("rank-deficient design matrix: column `{column}` is collinear with [{}]", collinear_with.join(", "))]
    RankDeficient {
        column: String,
        collinear_with: Vec<String>,
    },

    /// The requested estimator, variance method or test does not fit the
    /// data or the declared design.
    #[error("incompatible request: {0}")]
    Incompatible(String),

    #[error("enumeration refused: {count} assignments exceeds the cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the content of user-supplied data files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::Schema(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
