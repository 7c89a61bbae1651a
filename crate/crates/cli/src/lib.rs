//! Pipeline stages behind the `dsre` command.
//!
//! Every stage reads its inputs from the configured files or from earlier
//! artifacts in the output directory, and writes its own artifacts there
//! atomically.

pub mod config;
pub mod stages;

use std::path::PathBuf;

pub use config::PipelineConfig;
pub use stages::{run_stage, synth_demo, Artifacts, Stage};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("missing artifact {}: run {stage} first", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error(transparent)]
    Core(#[from] dsre_core::Error),
}

impl CliError {
    /// Core errors raised while validating the config.
    pub fn validation(err: dsre_core::Error) -> Self {
        match err {
            dsre_core::Error::Config { field, message } => CliError::Invalid(format!("{field}: {message}")),
            other => CliError::Invalid(other.to_string()),
        }
    }

    /// 1 for validation failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            _ => 2,
        }
    }
}
