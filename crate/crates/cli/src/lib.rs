//! Command-line orchestration of symmetry audits: configs, resumable run
//! directories and table export on top of `facesym-core`.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod export;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, Run, RunSummary, Stage};
