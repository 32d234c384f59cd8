//! Library surface of the pipeline orchestrator, exposed so integration
//! tests can drive stages directly.

pub mod config;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {0} (run the upstream stage first)")]
    MissingArtifact(PathBuf),
    #[error("stale artifact {artifact}: {cause} (rerun upstream stages or pass --force)")]
    Stale { artifact: String, cause: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 0 ok, 2 config error, 3 missing/stale artifact, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) | CliError::Stale { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<genret_core::model::ModelError> for CliError {
    fn from(e: genret_core::model::ModelError) -> Self {
        match e {
            genret_core::model::ModelError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<genret_core::retrieval::RetrievalError> for CliError {
    fn from(e: genret_core::retrieval::RetrievalError) -> Self {
        match e {
            genret_core::retrieval::RetrievalError::Model(m) => m.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}
