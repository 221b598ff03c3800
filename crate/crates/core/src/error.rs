//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by loaders, transforms, and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed header or column layout.
    #[error("schema error: {0}")]
    Schema(String),

    /// Duplicate (country, year) row or (country, year, kind) triple.
    #[error("duplicate entry at line {line}: {key}")]
    Duplicate { line: u64, key: String },

    /// Input contained no usable rows.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A token outside an enumerated value set.
    #[error("unknown value `{value}` for {field}; expected one of {allowed}")]
    EnumeratedValue {
        field: &'static str,
        value: String,
        allowed: String,
    },

    /// A referenced variable is not in the dataset.
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Design matrix without full column rank; names a maximal set of
    /// columns involved in the collinearity.
    #[error("rank-deficient design: collinear columns {columns:?} (rank {rank} of {ncols})")]
    RankDeficient {
        columns: Vec<String>,
        rank: usize,
        ncols: usize,
    },

    #[error("insufficient rows: n = {n} <= p = {p}")]
    InsufficientRows { n: usize, p: usize },

    /// Prediction design does not match the fitted coefficient names.
    #[error("column mismatch: missing {missing:?}, extra {extra:?}")]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("fold configuration error: {0}")]
    FoldConfig(String),

    /// Fewer than 2 countries or 2 years; fixed effects are not identified.
    #[error("fixed effects degenerate: {0}")]
    FixedEffectsDegenerate(String),

    /// The weight decomposition denominator sum(epsilon * D) vanished.
    #[error("degenerate decomposition: sum of treated residuals is zero, weights undefined")]
    DegenerateDecomposition,

    /// Invalid generator or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Monte Carlo harness failure (too many failed replications).
    #[error("harness error: {0}")]
    Harness(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that stem from a bad configuration rather than from
    /// the data or the estimation itself. The CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
