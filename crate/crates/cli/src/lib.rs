//! Experiment runner for Fisher-Rao out-of-distribution detection.

pub mod config;
pub mod error;
pub mod histogram;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod toy;

pub use config::{ExperimentConfig, Setting};
pub use error::{CliError, CliResult};
pub use pipeline::{run, RunOptions};
pub use report::{Report, ReportRow};
