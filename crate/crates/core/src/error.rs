use std::path::PathBuf;

use thiserror::Error;

/// Broad failure categories, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-numeric value {value:?} at line {line}, column {column}")]
    NonNumeric {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("non-finite value at line {line}, column {column}")]
    NonFinite { line: usize, column: usize },
    #[error("label column {0} not found")]
    LabelColumnNotFound(String),
    #[error("expected exactly two label values, found {0:?}")]
    TooManyClasses(Vec<String>),
    #[error("expected exactly two label values, found only {0:?}")]
    SingleClass(Vec<String>),
    #[error("positive label {0:?} does not occur in the label column")]
    UnknownPositiveLabel(String),
    #[error("dataset is empty or has fewer than two rows")]
    EmptyDataset,
    #[error("rows have inconsistent widths: expected {expected}, found {found} at line {line}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("fold count {k} out of range for n = {n}")]
    FoldCount { k: usize, n: usize },
    #[error("lambda = {lambda} is outside the validity interval of the {kind} rate (limit {limit})")]
    OutOfValidityInterval {
        kind: &'static str,
        lambda: f64,
        limit: f64,
    },
    #[error("rate function {0} does not provide this quantity")]
    WrongRateKind(&'static str),
    #[error("the dataset has no pair of observations with opposite labels")]
    NoMixedPairs,
    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("index ({row}, {col}) out of range for a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_)
            | Error::FoldCount { .. }
            | Error::OutOfValidityInterval { .. }
            | Error::WrongRateKind(_) => ErrorClass::Config,
            Error::NonFiniteObjective | Error::AllZeroWeights => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
