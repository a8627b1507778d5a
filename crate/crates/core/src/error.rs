use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cost {cost} exceeds the mean {mean}; the cap value would be negative")]
    NegativeCap { cost: f64, mean: f64 },
    #[error("constraint is not a matroid")]
    NotMatroid,
    #[error("knapsack sizes cannot be solved exactly: {0}")]
    UnsupportedExact(String),
    #[error("unsupported constraint: {0}")]
    UnsupportedConstraint(String),
    #[error("{what}: size {size} exceeds the limit {limit}")]
    TooLarge { what: &'static str, size: f64, limit: f64 },
    #[error("utility model mismatch: expected {expected}, found {found}")]
    ModelMismatch { expected: String, found: String },
    #[error("no threshold reaches probability {delta}; the most permissive gives {reachable}")]
    InfeasibleDelta { delta: f64, reachable: f64 },
    #[error("the agent's problem is not a per-element threshold search")]
    NotPandoraShaped,
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Guard violations get their own exit code in the CLI.
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::TooLarge { .. })
    }
}
