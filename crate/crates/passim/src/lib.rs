//! File formats, configuration and task drivers for `passim` experiments.
//!
//! The numerics live in `passim-core`; this crate adds a thread-pool
//! executor, the binary/JSON output formats and the batch runner used by the
//! `passim` binary.

pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;
pub mod tasks;

pub use config::{ExperimentConfig, Task};
pub use error::RunError;
pub use manifest::{solve_count_report, Manifest};
pub use tasks::{run, run_config, RunOptions, RunOutcome};
