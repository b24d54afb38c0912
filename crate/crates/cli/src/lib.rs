//! Library side of the `fernmatch` binary: run configuration, subcommands
//! and the evaluation harness.

// `!(x > 0.0)` is used so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;

pub use commands::{cmd_eval, cmd_inspect, cmd_match, cmd_train, MatchOptions};
pub use config::RunConfig;
pub use error::CliError;
