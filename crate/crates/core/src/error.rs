use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {quantity}: {value} (must be finite and non-negative)")]
    InvalidQuantity { quantity: &'static str, value: f64 },

    #[error("interval has zero total length")]
    ZeroLengthInterval,

    #[error("repetition interval is zero")]
    ZeroInterval,

    #[error("operation not supported in {0} mode")]
    UnsupportedMode(String),

    #[error("phase {0} has no idle inflation factor")]
    NotAnIdlePhase(String),

    #[error("missing catalog entry: {0}")]
    MissingCatalogEntry(String),

    #[error("invalid combination: {0}")]
    InvalidCombination(String),

    #[error("initial operations ({t_init:.6} s) exceed total operating time ({total:.6} s)")]
    InitExceedsTotal { t_init: f64, total: f64 },

    #[error("partial cycle {t_partial:.9} s exceeds cycle length {cycle:.9} s")]
    PartialExceedsCycle { t_partial: f64, cycle: f64 },

    #[error("operating cycle has zero duration but {remaining:.6} s remain after initial operations")]
    EmptyCycle { remaining: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("empty trace file")]
    EmptyFile,

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: time is not strictly increasing")]
    NonMonotonicTime { line: usize },

    #[error("invalid segmentation config: {0}")]
    InvalidSegmentConfig(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("zero measured energy")]
    ZeroMeasured,
}

impl Error {
    /// True for errors caused by malformed user input files (as opposed to
    /// model or catalog failures).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::EmptyFile
                | Error::MalformedRow { .. }
                | Error::NonMonotonicTime { .. }
                | Error::InvalidSegmentConfig(_)
        )
    }
}
