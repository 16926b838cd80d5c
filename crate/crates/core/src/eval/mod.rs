//! Seeded evaluation: rollouts with the online provider, metrics, and the
//! study pipelines built on them.

pub mod metrics;
pub mod rollout;
pub mod studies;

use thiserror::Error;

use crate::data::DataError;
use crate::env::EnvError;
use crate::expert::PolicyError;
use crate::feedback::FeedbackError;
use crate::model::{CheckpointError, ModelError, TrainError};

pub use metrics::{difficulty_rank, efficiency_gain, path_weighted_reward, polyfit2, spearman, EpisodeResult, RunReport};
pub use rollout::{evaluate, rollout, EvalConfig, PolicyFactory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("seed lists differ: {0}")]
    SeedMismatch(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}
