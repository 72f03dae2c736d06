//! Configuration and stage runners behind the `entangle` binary.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig};
pub use run::{execute, RunError, RunOptions, RunReport, Stage};
