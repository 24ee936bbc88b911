use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: negative candela value {value}")]
    NegativeCandela { line: usize, value: f64 },
    #[error("line {line}: expected {expected} {what}, found {found}")]
    CountMismatch {
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unsupported TILT specification `{0}` (only TILT=NONE is supported)")]
    UnsupportedTilt(String),
    #[error("missing TILT line")]
    MissingTilt,
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("no samples")]
    Empty,
    #[error("polar angles must be strictly increasing (at {0} degrees)")]
    NotIncreasing(f64),
    #[error("invalid candela value {value} at {phi} degrees")]
    InvalidCandela { phi: f64, value: f64 },
    #[error("plane index {index} out of range ({planes} planes)")]
    PlaneOutOfRange { index: usize, planes: usize },
    #[error("missing integer-degree samples at {0:?}")]
    MissingAngles(Vec<u32>),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dark instance: measured intensities sum to zero")]
    DarkInstance,
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("singular linear system (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("non-finite entries in linear system")]
    NonFinite,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no nonzero pairs")]
    NoNonzeroPairs,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no records for configuration `{0}`")]
    NoRecords(String),
    #[error("zero baseline value at index {0}")]
    ZeroBaseline(usize),
    #[error("instance `{instance}` lacks a result for configuration `{config}`")]
    IncompleteInstance { instance: String, config: String },
}
