use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scatterer: {0}")]
    InvalidScatterer(String),

    #[error("scatterer at {range_m:.3} m aliases: unambiguous range is {max_range_m:.3} m")]
    RangeAliasing { range_m: f64, max_range_m: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("angle ambiguity: arcsine argument {0} outside [-1, 1]")]
    AngleAmbiguity(f64),

    #[error("resize error: {0}")]
    Resize(String),

    #[error("input contains non-finite values")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("alignment failure: {0}")]
    AlignmentFailure(String),

    #[error("no rotation: every angle offset is zero")]
    NoRotation,

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("mosaic canvas needs {cols} columns, limit is {max_cols}")]
    CanvasTooLarge { cols: usize, max_cols: usize },

    #[error("no valid triplets among {records} records ({skipped} queries skipped)")]
    NoTriplets { records: usize, skipped: usize },

    #[error("duplicate place id {0}")]
    DuplicateId(u64),

    #[error("database is empty")]
    EmptyDatabase,

    #[error("query result carries no ground truth")]
    MissingGroundTruth,

    #[error("recall undefined: {0}")]
    UndefinedRecall(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The underlying error with any stage context peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
