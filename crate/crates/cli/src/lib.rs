//! Command-line front end for the narrow-tube experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{CliError, CommandReport};
pub use config::{ExperimentConfig, Overrides};
