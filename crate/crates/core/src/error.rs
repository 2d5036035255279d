use thiserror::Error;

use crate::data::Arm;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Consistency,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at row {row}: expected {expected} covariates, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite {field} at row {row}")]
    NonFinite { row: usize, field: String },

    #[error("treatment must be 0 or 1 (row {row})")]
    InvalidTreatment { row: usize },

    #[error("empty {0} arm")]
    EmptyArm(Arm),

    #[error("need at least 2 units, got {0}")]
    TooFewUnits(usize),

    #[error("zero covariate dimension")]
    ZeroDimension,

    #[error("malformed input: {message} (line {line})")]
    Malformed { line: usize, message: String },

    #[error("permutation is not a bijection on 1..={n}: {reason}")]
    NotBijective { n: usize, reason: String },

    #[error(
        "unit {unit} has no opposite-arm point inside the kernel support; use a larger bandwidth"
    )]
    StarvedUnit { unit: usize },

    #[error("{needed} opposite-arm units needed, only {available} available for unit {unit}")]
    TooFewNeighbors {
        unit: usize,
        needed: usize,
        available: usize,
    },

    #[error("local linear system for unit {unit} is singular even after ridge regularization")]
    SingularSystem { unit: usize },

    #[error("infeasible forest configuration: {0}")]
    InfeasibleForest(String),

    #[error("under-identified polynomial fit on the {arm} arm: {units} units for {basis} basis functions")]
    UnderIdentified {
        arm: Arm,
        units: usize,
        basis: usize,
    },

    #[error("cross-fitting failed in fold {fold}: {message}")]
    Fold { fold: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error(
        "AIPW identity violated: direct {direct:.17e} vs reassembled {reassembled:.17e} (|diff| {diff:.3e})"
    )]
    Consistency {
        direct: f64,
        reassembled: f64,
        diff: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Config { .. } | Error::InfeasibleForest(_) => {
                ErrorKind::Config
            }
            Error::Consistency { .. } => ErrorKind::Consistency,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
