//! Config-driven experiment runner behind the command line tool.

pub mod config;
pub mod data;
mod experiment;
pub mod metrics;

pub use experiment::{
    build_model, join_federation, load_dataset, run_experiment, serve_federation, train_only,
    write_outputs, Artifact, RunOutput,
};

use thiserror::Error;

use crate::anonymize::AnonError;
use crate::attacks::AttackError;
use crate::dp::DpError;
use crate::fed::FedError;
use crate::model::ModelError;
use crate::paillier::PaillierError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Anon(#[from] AnonError),
}

impl HarnessError {
    /// Short machine-readable category for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Data(_) => "data",
            Self::Model(_) => "model",
            Self::Attack(_) => "attack",
            Self::Fed(_) => "federation",
            Self::Dp(_) => "privacy",
            Self::Paillier(_) => "paillier",
            Self::Anon(_) => "anonymize",
        }
    }
}
