use thiserror::Error;

use crate::state::StateId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("no data recorded for operation {operation} / {key}")]
    NoData { operation: StateId, key: String },

    #[error("event at ts {got} precedes engine clock {last}")]
    OutOfOrder { last: i64, got: i64 },

    #[error("unknown machine `{0}`")]
    UnknownMachine(String),

    #[error("unknown alarm `{0}`")]
    UnknownAlarm(String),

    #[error("alarm `{0}` already closed")]
    AlarmClosed(String),

    #[error("unknown model instance `{0}`")]
    UnknownModel(String),

    #[error("model instance `{0}` is not collecting")]
    NotCollecting(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ts regression at line {line}: {got} after {last} for machine `{machine}`")]
    TsRegression {
        line: usize,
        machine: String,
        last: i64,
        got: i64,
    },

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
