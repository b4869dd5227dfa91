use thiserror::Error;

/// Problems found while reading or validating a cohort dataset.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: negative count")]
    NegativeCount { line: usize },
    #[error("line {line}: duplicate age {age}")]
    DuplicateAge { line: usize, age: i64 },
    #[error("age gap between {from} and {to}")]
    AgeGap { from: i64, to: i64 },
    #[error("line {line}: deaths exceed survivors at age {age}")]
    DeathsExceedSurvivors { line: usize, age: i64 },
    #[error("dataset has no rows")]
    Empty,
    #[error("cohort gains unsupported: survivors rise from age {age} to {next}")]
    CohortGains { age: i64, next: i64 },
    #[error("{0}")]
    Invalid(String),
}

/// A hazard or likelihood could not be evaluated at the requested point.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{model}: parameter {name} = {value} is outside its domain")]
    Domain { model: &'static str, name: &'static str, value: f64 },
    #[error("{model}: expected {expected} parameters, got {got}")]
    Arity { model: &'static str, expected: usize, got: usize },
    #[error("{model}: non-finite value at z = {z}")]
    NonFinite { model: &'static str, z: f64 },
    #[error("{model}: negative hazard at z = {z}")]
    NegativeHazard { model: &'static str, z: f64 },
    #[error("zero death probability at age {age} with {deaths} observed deaths")]
    ZeroProbability { age: i64, deaths: u64 },
    #[error("unit death probability at age {age} with {survivors} observed survivors")]
    UnitProbability { age: i64, survivors: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown model `{name}`; valid names: {valid}")]
    UnknownModel { name: String, valid: String },
    #[error("{model}: all {starts} starts failed")]
    FitFailed { model: &'static str, starts: usize },
    #[error("cross-validation fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
