//! Error type shared by the library modules.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("single-class label: every row is {0}")]
    SingleClassLabel(&'static str),

    #[error("duplicate metric name `{0}`")]
    DuplicateMetric(String),

    #[error("empty metric name at column {0}")]
    EmptyMetricName(usize),

    #[error("column `{name}` has {found} values, expected {expected}")]
    RaggedColumn {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("unknown metric(s): {}", .0.join(", "))]
    UnknownMetrics(Vec<String>),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("not enough rows: {rows} rows for {params} parameters")]
    NotEnoughRows { rows: usize, params: usize },

    #[error("dataset too small/imbalanced for bootstrap: {0} consecutive degenerate resamples")]
    DegenerateBootstrap(usize),

    #[error("pool metric `{metric}` is not correlated with `{target}` (|rho| = {rho:.4})")]
    NotCorrelated {
        metric: String,
        target: String,
        rho: f64,
    },

    #[error("report kind mismatch: expected {expected}, found {found}")]
    ReportKind { expected: String, found: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
