use thiserror::Error;

/// Errors produced anywhere in the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("panel must have at least 2 units and 2 periods, got {n_units}x{n_periods}")]
    TooSmall { n_units: usize, n_periods: usize },

    #[error("non-finite value at (unit {unit}, period {period})")]
    NonFinite { unit: usize, period: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing cell ({unit},{period})")]
    MissingCell { unit: String, period: String },

    #[error("duplicate cell ({unit},{period}) on line {line}")]
    DuplicateCell {
        unit: String,
        period: String,
        line: u64,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown {kind} label '{label}'; available: {available}")]
    UnknownLabel {
        kind: &'static str,
        label: String,
        available: String,
    },

    #[error("cell ({unit}, {period}) is outside a {n_units}x{n_periods} panel")]
    CellOutOfRange {
        unit: usize,
        period: usize,
        n_units: usize,
        n_periods: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("two-way effects are not identified after excluding cells {0:?}")]
    Unidentified(Vec<(usize, usize)>),

    #[error("no donors available: {0}")]
    NoDonors(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
