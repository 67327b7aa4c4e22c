use thiserror::Error;

#[derive(Debug, Error)]
pub enum RccError {
    #[error("no alternating tiling of {rows} rows with line height {line} and strip height {strip}")]
    NoValidTiling { rows: usize, line: usize, strip: usize },

    #[error("supernode state space {states} exceeds cap {cap}")]
    StateSpaceTooLarge { states: u128, cap: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("fitted moments deviate from target by {deviation:e} (tolerance {tolerance:e})")]
    MomentMismatch { deviation: f64, tolerance: f64 },

    #[error("target moment component {index} lies on or outside the moment hull")]
    HullBoundary { index: usize },

    #[error("moment matching did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    DidNotConverge {
        iterations: usize,
        gradient_norm: f64,
        best: Box<crate::moment::FitResult>,
    },

    #[error("pmf has {0} symbols, more than the coder supports")]
    TooManySymbols(usize),

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("layout does not match image: {0}")]
    LayoutMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RccError>;
