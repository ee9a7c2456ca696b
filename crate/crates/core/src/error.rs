use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("non-finite importance ratio at slot {slot}, index {index} (log-ratio {log_ratio})")]
    NonFiniteRatio {
        slot: usize,
        index: usize,
        log_ratio: f64,
    },

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    #[error("dual bracket failure: g({lo:e}) = {g_lo}, g({hi:e}) = {g_hi}")]
    DualBracket {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("conjugate gradient residual became non-finite after {iters} iterations")]
    NonFiniteResidual { iters: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("probe state set is empty")]
    EmptyProbe,

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
