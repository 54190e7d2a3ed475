use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown wavelet family '{0}' (known: haar, db2, db4, bior2.2)")]
    UnknownFamily(String),

    #[error("signal of length {length} is too short for level {level} of '{family}': level input must have at least {min} samples")]
    SignalTooShort {
        length: usize,
        level: usize,
        family: String,
        min: usize,
    },

    #[error("decomposition level must be at least 1")]
    ZeroLevel,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("inconsistent coefficient pyramid: {0}")]
    InconsistentPyramid(String),

    #[error("invalid threshold parameters: {0}")]
    InvalidThreshold(String),

    #[error("noise scale must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("token {0} is not a value token of this vocabulary")]
    UnknownToken(u32),

    #[error("EOS token inside coefficient segment at position {0}")]
    EosInSegment(usize),

    #[error("window has no observed values")]
    AllMissing,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("duplicate observation for item '{item_id}' at {timestamp} (lines {first_line} and {second_line})")]
    DuplicateTimestamp {
        item_id: String,
        timestamp: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("mixed frequencies in one dataset: '{0}' and '{1}'")]
    MixedFrequency(String, String),

    #[error("degenerate metric: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
