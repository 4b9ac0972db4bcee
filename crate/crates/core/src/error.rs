use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// State captured when an iteration cannot continue.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StateDump {
    pub t: usize,
    pub reason: String,
    pub state: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("every sampled pair was degenerate; no contraction ratio could be formed")]
    DegenerateSample,

    #[error("not a contraction: estimated factor {gamma_hat} >= 1")]
    NotAContraction { gamma_hat: f64 },

    #[error("iteration failed at t = {}: {}", .0.t, .0.reason)]
    Engine(Box<StateDump>),

    #[error("need at least {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("trace has no retained states; rerun with retain_states")]
    MissingStates,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: &str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        }
    }
}
