//! Configuration, orchestration and reporting for the `cwmtsne` binary.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult, Stage};
pub use pipeline::{run_pipeline, run_stages, EmbedMode, RunOutput, Stages};
