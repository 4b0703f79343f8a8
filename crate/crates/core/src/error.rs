use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },
    #[error("wide block {rows}x{cols} is not supported (irrep dimension must be >= multiplicity)")]
    WideBlock { rows: usize, cols: usize },
    #[error("random basis is numerically rank deficient (|r_ii| = {pivot:.3e})")]
    RankDeficient { pivot: f64 },
    #[error("non-finite value encountered at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },
    #[error("grid search needs more than {limit} cells (stopped at {size})")]
    GridTooLarge { size: f64, limit: f64 },
    #[error("cannot read {path}: {cause}")]
    Read {
        path: String,
        cause: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
