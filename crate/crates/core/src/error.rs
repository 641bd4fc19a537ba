use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("unknown state `{0}`")]
    InvalidState(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("horizon must be at least 1 (got {0})")]
    HorizonTooSmall(usize),

    #[error("no path from {from} back to {from} avoiding {avoid} has positive probability")]
    NoSuchPath { from: String, avoid: String },

    #[error(
        "stationary iteration did not converge after {iterations} steps (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("mixture weights must match laws and sum to 1 (sum = {sum}, {weights} weights, {laws} laws)")]
    WeightMismatch {
        sum: f64,
        weights: usize,
        laws: usize,
    },

    #[error("laws cannot be compared beyond n = {0}: tail mass location unknown")]
    IncomparableHorizons(u64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distribution has empty support")]
    EmptySupport,

    #[error("witness search exhausted its budget at k = {k} (no pair with log-ratio above {needed:.6}); f likely satisfies submultiplicativity")]
    BudgetExhausted { k: u64, needed: f64 },

    #[error("need at least 2 witnesses, got {0}")]
    TooFewWitnesses(usize),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
