//! Experiment harness for the Lyapunov redesign loop: configuration files,
//! the metrics log, network checkpoints, grid images and the `run` driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod image;
pub mod metrics;
pub mod report;

pub use config::{ConfigError, RedesignConfig, Variant};
pub use experiment::{run_redesign, RunOutput};
