//! Command-line front end: subcommands for every processing step and an
//! end-to-end pipeline driven by one JSON config.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod preview;

pub use config::{PipelineConfig, TrainFile};
pub use pipeline::{run_pipeline, run_pipeline_file, PipelineOutcome, StageError};
