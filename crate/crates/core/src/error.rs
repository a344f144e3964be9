use std::path::PathBuf;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum CpfError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("zero rows after cleaning ({dropped} rows dropped for missing values)")]
    ZeroRows { dropped: usize },

    #[error("no feature columns left after cleaning")]
    NoFeatures,

    #[error("categorical column `{0}` has a single category")]
    SingleCategory(String),

    #[error("numeric column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("column `{column}`: category `{value}` was not seen when the encoding was fitted")]
    UnseenCategory { column: String, value: String },

    #[error("k must be < n (k = {k}, n = {n})")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty point set")]
    EmptySet,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(&'static str),
}

pub type Result<T> = std::result::Result<T, CpfError>;
