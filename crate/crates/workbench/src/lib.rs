//! Workbench around the reservoir solvers: CSV ingestion, run configuration,
//! a file-backed run registry, the `oro` command line and an HTTP API.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod runner;
pub mod service;
pub mod store;
