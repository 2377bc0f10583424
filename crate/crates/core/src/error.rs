use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("support sizes differ ({0} vs {1}); resample both measures to a common size for exact transport in dimension > 1")]
    SupportSizeMismatch(usize, usize),

    #[error("support size {0} exceeds the exact assignment limit {1}")]
    SupportTooLarge(usize, usize),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("point ({v}, {w}) lies outside the Bihari domain")]
    OutsideDomain { v: f64, w: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bisection could not bracket a root: {0}")]
    NoBracket(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot certify a Hoelder constant: {0}")]
    Uncertifiable(String),

    #[error("too few usable nodes for a fit: {0} (need at least 3)")]
    TooFewNodes(usize),

    #[error("blow-up: particle {particle} of ensemble {ensemble} left the finite range at step {step} (t = {t})")]
    BlowUp {
        ensemble: usize,
        particle: usize,
        step: usize,
        t: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
