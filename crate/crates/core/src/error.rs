use thiserror::Error;

/// Errors raised by the hydro-system model and input validation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("volume {volume} outside storage curve: {bound} bound is {limit}")]
    VolumeOutOfRange {
        volume: f64,
        bound: &'static str,
        limit: f64,
    },
    #[error("level {level} outside storage curve: {bound} bound is {limit}")]
    LevelOutOfRange {
        level: f64,
        bound: &'static str,
        limit: f64,
    },
    #[error("invalid system spec: {0}")]
    InvalidSpec(String),
    #[error("invalid step record at step {step}: {reason}")]
    InvalidRecord { step: usize, reason: String },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid storage grid: {0}")]
    InvalidGrid(String),
}

/// Errors raised by the solvers (nDP, AWD-DP, nSDP, nRL) and policy simulation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no feasible transition from state (t={t}, storage index={i})")]
    NoFeasibleAction { t: usize, i: usize },
    #[error("no feasible transition from state (t={t}, storage index={i}, inflow class={class})")]
    NoFeasibleActionClass { t: usize, i: usize, class: usize },
    #[error("did not converge after {cycles} cycles; {changed} actions changed in the last cycle")]
    NotConverged { cycles: usize, changed: usize },
    #[error("policy has no entry for state {0}")]
    MissingPolicyEntry(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite Q value at episode {episode}, state {state}")]
    NonFiniteQ { episode: usize, state: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("allocation oracle refused: {0}")]
    OracleLimit(String),
    #[error("policy table format error: {0}")]
    PolicyFormat(String),
}
