use std::path::PathBuf;

use thiserror::Error;

/// Why a `(beta, lambda)` pair was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuningRejection {
    ANonpositive,
    BNonpositive,
    BetaOutOfRange,
}

impl std::fmt::Display for TuningRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            TuningRejection::ANonpositive => "a_nonpositive",
            TuningRejection::BNonpositive => "b_nonpositive",
            TuningRejection::BetaOutOfRange => "beta_out_of_range",
        };
        f.write_str(tag)
    }
}

/// Failure modes of the IDX reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxFault {
    BadMagic,
    Truncated,
    TrailingBytes,
    CountMismatch,
}

impl std::fmt::Display for IdxFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            IdxFault::BadMagic => "bad_magic",
            IdxFault::Truncated => "truncated",
            IdxFault::TrailingBytes => "trailing_bytes",
            IdxFault::CountMismatch => "count_mismatch",
        };
        f.write_str(tag)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("inadmissible tuning pair (beta={beta}, lambda={lambda}): {reason}")]
    Tuning {
        beta: f64,
        lambda: f64,
        reason: TuningRejection,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("idx {fault} in {path}")]
    Idx { fault: IdxFault, path: PathBuf },
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
