use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state error: {0}")]
    StateError(String),
    #[error("no active speech found")]
    NoSpeech,
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("value {value} outside range [{lo}, {hi}] for target {target}")]
    RangeError {
        target: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("unsupported audio format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u16),
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
