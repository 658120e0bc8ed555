use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("negative drift duration {0}")]
    NegativeDuration(f64),

    #[error("particle index {index} out of range for type {ty} with {len} particles")]
    IndexOutOfRange { ty: u8, index: usize, len: usize },

    #[error("state does not match parameters: expected ({n1}, {n2}) particles, found ({got1}, {got2})")]
    ShapeMismatch { n1: usize, n2: usize, got1: usize, got2: usize },

    #[error("target time {t_end} precedes current time {time}")]
    TimeReversal { time: f64, t_end: f64 },

    #[error("trajectory exceeded {limit} jump events before t = {t_end}")]
    EventLimit { limit: u64, t_end: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("config error: {0}")]
    ConfigFlag(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
