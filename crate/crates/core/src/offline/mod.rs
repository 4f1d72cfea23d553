//! Offline pipeline: behavior policies, logged datasets, fitted
//! Q-iteration, batch-constrained filtering and importance-sampling OPE.

pub mod bcq;
pub mod behavior;
pub mod dataset;
pub mod fqi;
pub mod ope;

pub use bcq::{bcq_filter, counts_from_dataset};
pub use behavior::{make_behavior_policy, rho_from_epsilon};
pub use dataset::{generate_dataset, Dataset, DatasetSpec, Environment, SepsisEnv, TabularEnv, Transition};
pub use fqi::{fqi, ActionFeatures, FqiConfig, FqiIteration, FqiResult, StateFeatures};
pub use ope::{ess, episode_weights, wis_estimate};

use crate::factorization::FactorError;
use crate::mdp::MdpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("behavior policy gives zero probability to logged action {action} in state {state} (episode {episode}, t = {t})")]
    SupportViolation { episode: usize, t: usize, state: usize, action: usize },
    #[error("malformed dataset: {0}")]
    Dataset(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}
