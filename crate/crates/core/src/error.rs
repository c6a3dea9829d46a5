use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),

    #[error("rejection sampler exceeded {0} trials")]
    RejectionLimit(usize),

    #[error("column {column} row {row}: value {value} is not positive, cannot take logs")]
    NonPositiveForLog { column: String, row: usize, value: f64 },

    #[error("ragged csv: row {row} has {got} fields, expected {expected}")]
    RaggedCsv { row: usize, expected: usize, got: usize },

    #[error("unknown transform tag `{0}`")]
    UnknownTransform(String),

    #[error("missing or non-numeric value in column {column} row {row}")]
    MissingValue { column: String, row: usize },

    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),

    #[error("no posterior draws available")]
    EmptyDraws,

    #[error("no forecast records for variable {variable} at horizon {horizon}")]
    EmptyCell { variable: usize, horizon: usize },

    #[error("benchmark RMSFE is zero for variable {variable} at horizon {horizon}")]
    BenchmarkZero { variable: usize, horizon: usize },

    #[error("loss differentials have a degenerate long-run variance")]
    DegenerateVariance,

    #[error("simulation exploded after {0} attempts")]
    ExplosiveSimulation(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) => ErrorClass::Usage,
            InsufficientData(_)
            | NonPositiveForLog { .. }
            | RaggedCsv { .. }
            | UnknownTransform(_)
            | MissingValue { .. }
            | NotAPermutation(_)
            | EmptyDraws
            | EmptyCell { .. }
            | Io { .. }
            | Csv(_)
            | Json(_) => ErrorClass::Data,
            NotPositiveDefinite { .. }
            | DimensionMismatch { .. }
            | SingularDesign(_)
            | InvalidParameters(_)
            | RejectionLimit(_)
            | BenchmarkZero { .. }
            | DegenerateVariance
            | ExplosiveSimulation(_) => ErrorClass::Numeric,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            NotPositiveDefinite { .. } => "NotPositiveDefinite",
            DimensionMismatch { .. } => "DimensionMismatch",
            InsufficientData(_) => "InsufficientData",
            SingularDesign(_) => "SingularDesign",
            InvalidParameters(_) => "InvalidParameters",
            RejectionLimit(_) => "RejectionLimit",
            NonPositiveForLog { .. } => "NonPositiveForLog",
            RaggedCsv { .. } => "RaggedCsv",
            UnknownTransform(_) => "UnknownTransform",
            MissingValue { .. } => "MissingValue",
            NotAPermutation(_) => "NotAPermutation",
            EmptyDraws => "EmptyDraws",
            EmptyCell { .. } => "EmptyCell",
            BenchmarkZero { .. } => "BenchmarkZero",
            DegenerateVariance => "DegenerateVariance",
            ExplosiveSimulation(_) => "ExplosiveSimulation",
            Config(_) => "Config",
            Io { .. } => "Io",
            Csv(_) => "Csv",
            Json(_) => "Json",
        }
    }
}
