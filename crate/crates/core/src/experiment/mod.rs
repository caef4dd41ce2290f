//! Config-driven experiments: presets, checkpoints, runs and reports.

mod checkpoint;
mod config;
mod report;
mod runner;

pub use checkpoint::*;
pub use config::*;
pub use report::*;
pub use runner::*;
