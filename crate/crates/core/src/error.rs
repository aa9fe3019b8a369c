use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("event bisection did not converge within 128 iterations")]
    StepUnderflow,
    #[error("state is not on any active guard component")]
    NotOnGuard,
    #[error("reset image {image:?} lies outside the domain of mode {mode}")]
    ResetOutOfDomain { mode: usize, image: Vec<f64> },
    #[error("box grid would have {nodes} nodes, above the cap of {cap}")]
    GridTooFine { nodes: u64, cap: u64 },
    #[error("{count} recurrent components exceed the cap of {cap}")]
    TooManyComponents { count: usize, cap: usize },
    #[error("no chain found at this resolution")]
    NoChain,
    #[error("tail box set still shrinking; increase the transient")]
    TransientTooShort,
    #[error("suspension flow exceeded its segment budget")]
    BudgetExceeded,
    #[error("lie derivative degree {degree} exceeds cap {cap}")]
    DegreeOverflow { degree: u32, cap: u32 },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("execution blocked at {0}")]
    Blocked(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, HybridError>;

impl From<std::io::Error> for HybridError {
    fn from(e: std::io::Error) -> Self {
        HybridError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HybridError {
    fn from(e: serde_json::Error) -> Self {
        HybridError::Io(e.to_string())
    }
}

impl From<csv::Error> for HybridError {
    fn from(e: csv::Error) -> Self {
        HybridError::Io(e.to_string())
    }
}
