use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmcError {
    #[error("state space must contain at least one state")]
    EmptySpace,
    #[error("duplicate state label {0}")]
    DuplicateState(String),
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("non-positive rate {rate} on transition {from} -> {to}")]
    NonPositiveRate { from: usize, to: usize, rate: f64 },
    #[error("self-loop on state {0}")]
    SelfLoop(String),
    #[error("generator has no unique steady state: {0}")]
    SingularOrReducible(String),
    #[error("iterative solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("vector is not a probability distribution")]
    NotAProbabilityVector,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("state space of {states} states exceeds the bound of {bound}")]
    CapacityOverflow { states: usize, bound: usize },
    #[error("non-positive macro delay {0}; cannot derive VM acquisition rate")]
    NonPositiveDelay(f64),
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidParams {
            field,
            reason: reason.into(),
        }
    }
}
