use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty vector: at least one component is required")]
    Empty,

    #[error("concentration parameter {index} must be finite and > 0, got {value}")]
    InvalidConcentration { index: usize, value: f64 },

    #[error("coordinate {index} must be finite and >= 0, got {value}")]
    InvalidCoordinate { index: usize, value: f64 },

    #[error("coordinates sum to {sum}, outside the simplex tolerance")]
    NotOnSimplex { sum: f64 },

    #[error("density diverges: coordinate {index} is 0 with concentration {alpha} < 1")]
    DivergentDensity { index: usize, alpha: f64 },

    #[error("truncation index {index} out of range for dimension {n}")]
    TruncationIndexOutOfRange { index: usize, n: usize },

    #[error("truncation set must be a proper subset of the {n} indices")]
    TruncationNotProper { n: usize },

    #[error("term has count {count} at truncated index {index}")]
    CountOnTruncatedIndex { index: usize, count: u64 },

    #[error("term total {total} exceeds the supported maximum of 2^32")]
    CountTotalTooLarge { total: u64 },

    #[error("observation model needs at least one term")]
    NoTerms,

    #[error("expected a single-term model, got {terms} terms")]
    NotSingleTerm { terms: usize },

    #[error("truncated mass {mass} must be < 1")]
    TruncatedMassAtOne { mass: f64 },

    #[error("auxiliary count rate {rate} overflows the sampler (truncated mass too close to 1)")]
    AuxiliaryOverflow { rate: f64 },

    #[error("invalid MH configuration: {0}")]
    InvalidMhConfig(String),

    #[error("step count must be >= 1")]
    NoSteps,

    #[error("sample index t={t} out of range 1..={len}")]
    SliceOutOfRange { t: usize, len: usize },

    #[error("lag {lag} too large for a retained slice of length {len}")]
    LagTooLarge { lag: usize, len: usize },

    #[error("component {component} out of range for dimension {n}")]
    ComponentOutOfRange { component: usize, n: usize },

    #[error("need at least {needed} chains, got {found}")]
    TooFewChains { needed: usize, found: usize },

    #[error("retained slice has {len} samples, need at least 2")]
    SliceTooShort { len: usize },

    #[error("chains in an ensemble must share shape: chain {index} has {found_steps}x{found_dim}, expected {steps}x{dim}")]
    RaggedEnsemble {
        index: usize,
        steps: usize,
        dim: usize,
        found_steps: usize,
        found_dim: usize,
    },

    #[error("within-chain covariance is singular after projection ({detail})")]
    SingularWithinCovariance { detail: String },

    #[error("grid integration supports n in 2..=4, got n={n}")]
    GridDimension { n: usize },

    #[error("grid resolution must be >= 1, got {0}")]
    GridResolution(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed trace {path}: {reason}")]
    MalformedTrace { path: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
