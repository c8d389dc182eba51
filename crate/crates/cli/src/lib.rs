//! Experiment orchestration for the `xcam` command: configuration, the staged
//! pipeline, and report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, PipelineOutcome};

/// Environment variable that overrides the default artifact root.
pub const ARTIFACT_ROOT_ENV: &str = "XCAM_ARTIFACTS";

/// Root directory for default output locations.
pub fn artifact_root() -> std::path::PathBuf {
    std::env::var_os(ARTIFACT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(Into::into)
        .unwrap_or_else(|| "artifacts".into())
}
