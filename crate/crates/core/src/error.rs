use thiserror::Error;

/// Errors raised by the estimators, the models and the run harness.
#[derive(Debug, Error)]
pub enum AbcError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A configured hard cap would be exceeded. `cap` names the knob.
    #[error("resource cap `{cap}` exceeded: requested {requested}, limit {limit}")]
    Resource {
        cap: &'static str,
        requested: String,
        limit: String,
    },

    /// The self-normalizing denominator came out nonpositive.
    #[error(
        "nonpositive marginal likelihood estimate (sum of weights {sum_weights:e} over {m} samples); \
         increase M or n_rep"
    )]
    NonPositiveMarginal { sum_weights: f64, m: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("simulator failure: {0}")]
    Simulator(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AbcError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        AbcError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            AbcError::Input(_) | AbcError::Dimension { .. } | AbcError::Config { .. } => 2,
            AbcError::Io(_) => 2,
            AbcError::NonPositiveMarginal { .. }
            | AbcError::Numerical(_)
            | AbcError::Calibration(_)
            | AbcError::Simulator(_) => 3,
            AbcError::Resource { .. } => 4,
        }
    }
}

pub type Result<T, E = AbcError> = std::result::Result<T, E>;
