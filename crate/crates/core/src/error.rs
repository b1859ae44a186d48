use thiserror::Error;

/// A violated [`ControlConfig`](crate::model::ControlConfig) constraint.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("channel fractions sum to {sum}, expected 1 (|a0|^2 + |a1|^2 + |a2|^2)")]
    ChannelSumError { sum: f64 },
    #[error("parameter `{name}` = {value} violates its range ({constraint})")]
    NegativeParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("feedback strength c = {c} requires a channel-1 photocurrent, but |a1|^2 = 0")]
    FeedbackWithoutChannel1 { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("exceptional parameters: det A = 0, no unique stationary state")]
    ExceptionalCase,
    #[error("drift matrix is numerically singular (condition estimate {condition:e})")]
    SingularDrift { condition: f64 },
    #[error("resolvent A^2 + mu^2 is numerically singular at mu = {mu} (condition estimate {condition:e})")]
    SingularResolvent { mu: f64, condition: f64 },
    #[error("density matrix invalid: {0}")]
    InvalidState(String),
    #[error("SME step {step} rejected: positivity projection moved the state by {displacement:e} (bound {bound:e}); reduce dt")]
    StepRejected {
        step: usize,
        displacement: f64,
        bound: f64,
    },
    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),
    #[error("need at least 2 trajectories for a variance estimate, got {0}")]
    InsufficientData(usize),
    #[error("invalid search point: {0}")]
    InvalidPoint(String),
    #[error("invalid search specification: {0}")]
    InvalidSpec(String),
    #[error("no multistart point produced a feasible configuration")]
    NoFeasiblePoint,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
