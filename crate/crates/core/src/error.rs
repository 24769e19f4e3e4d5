use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameter vectors belong to different model specs")]
    SpecMismatch,

    #[error("{0} requires nonempty data")]
    EmptyData(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("partition infeasible: {0}")]
    InfeasiblePartition(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error(transparent)]
    Csv(#[from] CsvError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while ingesting a labeled CSV file.
#[derive(Debug, Error)]
pub enum CsvError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("column `{0}` not present in header")]
    MissingColumn(String),

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },

    #[error("line {line}: column `{column}` is not numeric: {value:?}")]
    NonNumeric { line: u64, column: String, value: String },

    #[error("line {line}: label {value:?} is not a base-10 integer")]
    InvalidLabel { line: u64, value: String },

    #[error("line {line}: negative label {value}")]
    NegativeLabel { line: u64, value: i64 },

    #[error("file contains no data rows")]
    Empty,

    #[error("csv read error: {0}")]
    Read(String),
}

/// Config parse and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key `{key}` at line {line}{}", suggestion_suffix(.suggestion))]
    UnknownKey {
        key: String,
        line: usize,
        suggestion: Option<String>,
    },

    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn suggestion_suffix(suggestion: &Option<String>) -> String {
    match suggestion {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}
