//! Parallel drivers, CSV formats and the `slowfast` command-line tool.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod io;
pub mod parallel;
pub mod pipeline;

pub use config::ExperimentConfig;

/// `git describe` output at build time, else the package version.
pub const VERSION: &str = env!("SLOWFAST_VERSION");
