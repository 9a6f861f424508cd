//! Experiment driver for active-subspace inference on the toy sequence VAE:
//! config parsing, text checkpoints, the staged pipeline and its reports.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{parse_config, render_config, ConfigError, RunConfig};
pub use pipeline::{run_pipeline, Pipeline, Stage};
