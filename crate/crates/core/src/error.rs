use chrono::NaiveDate;
use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto distinct exit codes: configuration problems,
/// data-coverage shortfalls and numeric failures each get their own code so
/// orchestration scripts can tell them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("date {date} outside series range {start}..={end}")]
    DateRange {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error("window underflow: day index {index} needs {needed} days of history, series has {available}")]
    WindowUnderflow {
        index: usize,
        needed: usize,
        available: usize,
    },

    #[error("insufficient future: labeling day index {index} needs data through index {needed}, series ends at {last}")]
    InsufficientFuture {
        index: usize,
        needed: usize,
        last: usize,
    },

    #[error("undefined ratio: sample set is empty")]
    UndefinedRatio,

    #[error("empty evaluation: no predictions to score")]
    EmptyEvaluation,

    #[error("undefined mean: sample set is empty")]
    UndefinedMean,

    #[error("length mismatch: {left} probabilities vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data coverage: need {needed_start} through {needed_end}, data spans {have_start} through {have_end}")]
    Coverage {
        needed_start: NaiveDate,
        needed_end: NaiveDate,
        have_start: NaiveDate,
        have_end: NaiveDate,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("sample file error: {0}")]
    SampleFile(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn numeric(location: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
