//! Language-teachable decision transformer: autodiff core, decoder,
//! training, adaptation, rollout policy and checkpoints.

pub mod agent;
pub mod check;
pub mod checkpoint;
pub mod features;
pub mod tensor;
pub mod train;
pub mod transformer;

#[cfg(test)]
mod oracle_tests;

pub use agent::{Agent, DEFAULT_TARGET_RTG};
pub use checkpoint::{Checkpoint, CheckpointError, CheckpointMeta};
pub use features::FeatureSpec;
pub use train::{adapt, encode_episodes, train, AdaptConfig, EncodedEpisode, TrainConfig, TrainError, TrainLog};
pub use transformer::{Model, ModelConfig, ModelError, SeqItem, SeqStep};

use crate::env::{action_set, EnvConfig};

/// Named hyperparameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// CPU-budget defaults.
    Desk,
    /// Full-size GridHome hyperparameters (wider model, lr 1e-4).
    HomegridFull,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Preset::Desk),
            "homegrid-full" => Some(Preset::HomegridFull),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::HomegridFull => "homegrid-full",
        }
    }

    /// Model shape for `env`, with the language width of the embedder.
    pub fn model_config(self, env: &EnvConfig, lang_dim: usize) -> ModelConfig {
        let spec = FeatureSpec::for_env(env);
        ModelConfig {
            n_layers: 3,
            n_heads: 1,
            d_model: match self {
                Preset::Desk => 64,
                Preset::HomegridFull => 128,
            },
            context_k: 10,
            dropout: 0.1,
            action_count: action_set(env.kind()).len(),
            state_dim: spec.dim(),
            lang_dim,
            max_timestep: env.limits().max_steps,
            rtg_scale: 1.0,
            init_seed: 0,
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig { lr: 1e-3, steps: 1500, batch_size: 32, warmup_steps: 100, ..TrainConfig::default() },
            Preset::HomegridFull => TrainConfig { lr: 1e-4, steps: 10_000, batch_size: 64, warmup_steps: 1000, ..TrainConfig::default() },
        }
    }

    /// Both presets adapt at 1e-5. A larger rate memorizes the few shots
    /// within the 40 epochs and erodes what pretraining learned.
    pub fn adapt_config(self) -> AdaptConfig {
        AdaptConfig::default()
    }
}
