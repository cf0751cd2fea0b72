use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("support must contain at least one point")]
    EmptySupport,
    #[error("support point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate support point at indices {first} and {second}")]
    DuplicatePoint { first: usize, second: usize },
    #[error("distributions or channel are defined on different supports")]
    SupportMismatch,
    #[error("expected a vector of length {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid probability mass: {0}")]
    InvalidMass(String),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("sample index {index} out of range for support of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("support has a single point (zero diameter)")]
    DegenerateSupport,
    #[error("diagonal dominance check failed: {0}")]
    AssumptionViolation(String),
    #[error("threshold is not bracketed: {0}")]
    NotBracketed(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ambiguity set is empty: radius {radius} is below the minimal achievable distance {min_radius}")]
    EmptyAmbiguitySet { radius: f64, min_radius: f64 },
    #[error("no grid point of the simplex lies in the ambiguity set")]
    NoFeasibleGridPoint,
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("malformed linear program: {0}")]
    MalformedLp(String),
    #[error("linear program solve failed: {0}")]
    LpFailure(String),
    #[error("loss model cannot be evaluated on this support: {0}")]
    DomainMismatch(String),
    #[error("invalid loss model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dataset is empty after ingestion")]
    EmptyDataset,
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptySupport => "empty_support",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicatePoint { .. } => "duplicate_point",
            Error::SupportMismatch => "support_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidMass(_) => "invalid_mass",
            Error::EmptySampleSet => "empty_sample_set",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidChannel(_) => "invalid_channel",
            Error::DegenerateSupport => "degenerate_support",
            Error::AssumptionViolation(_) => "assumption_violation",
            Error::NotBracketed(_) => "not_bracketed",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyAmbiguitySet { .. } => "empty_ambiguity_set",
            Error::NoFeasibleGridPoint => "no_feasible_grid_point",
            Error::ResourceLimit(_) => "resource_limit",
            Error::MalformedLp(_) => "malformed_lp",
            Error::LpFailure(_) => "lp_failure",
            Error::DomainMismatch(_) => "domain_mismatch",
            Error::InvalidModel(_) => "invalid_model",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::EmptyDataset => "empty_dataset",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
