//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("reserved token {token:?} appears in corpus")]
    ReservedToken { token: String },

    #[error("smoothing must be positive (k = {k})")]
    NonPositiveSmoothing { k: f64 },

    #[error("order must be at least 1 (order = {order})")]
    InvalidOrder { order: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("vocab mismatch: {left} vs {right}")]
    VocabMismatch { left: String, right: String },

    #[error("invalid context: {reason}")]
    InvalidContext { reason: String },

    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },

    #[error("empty sample")]
    EmptySample,

    #[error("empty reference sequence")]
    EmptyReference,

    #[error("out-of-vocabulary tokens: {}", tokens.join(", "))]
    OutOfVocab { tokens: Vec<String> },

    #[error("provider failed at generation step {step}: {source}")]
    ProviderAtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("proportionality band violated at token {token}: ratio {ratio} outside [{c1}, {c2}]")]
    BandViolated {
        token: u32,
        ratio: f64,
        c1: f64,
        c2: f64,
    },

    #[error("distribution has zero or negative mass at index {index}")]
    NonPositiveProbability { index: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("value pools too small for requested author count ({requested} > {available})")]
    PoolExhausted { requested: usize, available: usize },

    #[error("remote provider: {0}")]
    Remote(String),

    #[error("remote provider timed out: {0}")]
    RemoteTimeout(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether a retry could plausibly succeed (transient transport failures).
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::RemoteTimeout(_))
    }
}
