use thiserror::Error;

/// Errors surfaced by the model, the sampler and the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no ratings supplied")]
    EmptyInput,

    #[error("duplicate rating for user `{user}` on item `{item}`")]
    DuplicatePair { user: String, item: String },

    #[error("rating value {value} outside 1..={levels}")]
    RatingOutOfRange { value: i64, levels: usize },

    #[error("row {row} has {found} aspect ratings, expected {expected}")]
    InconsistentAspectCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("level {level} outside 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("index {index} outside valid range {range}")]
    IndexOutOfRange { index: usize, range: String },

    #[error("posterior sample list is empty")]
    EmptySamples,

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },

    #[error("no comparable item pairs for FCP")]
    NoComparablePairs,

    #[error("no user-item pair with varying aspect ratings")]
    NoEvaluablePairs,

    #[error("mismatched lengths: {0}")]
    LengthMismatch(String),

    #[error("archive: {0}")]
    Archive(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "EmptyInput",
            Error::DuplicatePair { .. } => "DuplicatePair",
            Error::RatingOutOfRange { .. } => "RatingOutOfRange",
            Error::InconsistentAspectCount { .. } => "InconsistentAspectCount",
            Error::InvalidHyperparameters(_) => "InvalidHyperparameters",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::LevelOutOfRange { .. } => "LevelOutOfRange",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::EmptySamples => "EmptySamples",
            Error::UnknownUser(_) => "UnknownUser",
            Error::UnknownItem(_) => "UnknownItem",
            Error::TooFewObservations { .. } => "TooFewObservations",
            Error::NoComparablePairs => "NoComparablePairs",
            Error::NoEvaluablePairs => "NoEvaluablePairs",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::Archive(_) => "Archive",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
        }
    }

    /// Numerical failures inside the sampler, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
