use thiserror::Error;

/// Errors raised by model construction, the exact oracle and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: undeclared identifier `{name}` for {kind}")]
    UndeclaredIdentifier {
        line: usize,
        kind: &'static str,
        name: String,
    },

    #[error("{table} row {row:?} is not stochastic (sum = {sum})")]
    NonStochasticRow {
        table: &'static str,
        row: Vec<usize>,
        sum: f64,
    },

    #[error("{table} entry {index:?} = {value} is not a valid {what}")]
    InvalidEntry {
        table: &'static str,
        index: Vec<usize>,
        value: f64,
        what: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The induced joint chain is not unichain, so average-cost quantities are undefined.
    #[error("chain has {} recurrent classes (irreducibility violated): {classes:?}", classes.len())]
    MultipleRecurrentClasses { classes: Vec<Vec<usize>> },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("feature map has no nonzero column")]
    EmptyFeatureMap,

    #[error("model cannot be written as .pomdp: {0}")]
    Unrepresentable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
