//! Reservoir operation optimization with nested water allocation.
//!
//! The [`hydro`] module models one reservoir feeding a hydropower cascade and
//! five consumptive users. Three solvers search storage policies over it:
//! deterministic DP ([`ndp`]), stochastic DP over clustered inflows
//! ([`nsdp`]) and tabular Q-learning ([`nrl`]). Each of them solves the
//! per-step user allocation ([`alloc`]) inside every transition. [`moss`]
//! runs a solver over many weight vectors and keeps the non-dominated ones.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod error;
pub mod grid;
pub mod hydro;
pub mod moss;
pub mod ndp;
pub mod nrl;
pub mod nsdp;
pub mod policy_table;
pub mod series;
pub mod simulate;
pub mod synthetic;

pub use error::{ModelError, SolveError};
