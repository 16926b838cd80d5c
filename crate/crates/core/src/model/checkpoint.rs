//! JSON checkpoints.
//!
//! Layout: a single object with `format` ("teachable-checkpoint"),
//! `version`, `config` (the [`ModelConfig`]), `features` (the
//! [`FeatureSpec`]), `embed_dim`, free-form `meta`, and `tensors`, a list of
//! `{name, rows, cols, value}` in parameter order with row-major values.
//! Floats use the shortest round-trip representation, so loading a saved
//! checkpoint reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::FeatureSpec;
use super::tensor::Param;
use super::transformer::{Model, ModelConfig, ModelError};

pub const FORMAT: &str = "teachable-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: not a checkpoint ({reason})")]
    Format { path: String, reason: String },
    #[error("{path}: checkpoint version {found}, this build reads {VERSION}")]
    Version { path: String, found: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointMeta {
    /// Feedback mode of the training data, e.g. `H+F-pool` or `none`.
    pub feedback_mode: String,
    pub dataset_sha256: String,
    pub train_steps: usize,
    pub final_loss: f64,
    /// Set when the model was adapted from another checkpoint.
    pub adapted_shots: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub features: FeatureSpec,
    pub embed_dim: usize,
    pub meta: CheckpointMeta,
    pub tensors: Vec<Param>,
}

impl Checkpoint {
    pub fn new(model: &Model, features: FeatureSpec, embed_dim: usize, meta: CheckpointMeta) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            features,
            embed_dim,
            meta,
            tensors: model.params.clone(),
        }
    }

    pub fn model(&self) -> Result<Model, ModelError> {
        let m = Model { config: self.config.clone(), params: self.tensors.clone() };
        m.check_layout()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io { path: path.display().to_string(), reason: e.to_string() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io { path: p.clone(), reason: e.to_string() })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CheckpointError::Format { path: p.clone(), reason: e.to_string() })?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(CheckpointError::Format { path: p, reason: "missing format tag".into() });
        }
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != VERSION {
            return Err(CheckpointError::Version { path: p, found });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| CheckpointError::Format { path: p, reason: e.to_string() })?;
        ck.model()?;
        if ck.config.state_dim != ck.features.dim() || ck.config.lang_dim != ck.embed_dim {
            return Err(CheckpointError::Model(ModelError::Shape(format!(
                "config dims {}/{} disagree with features {} / embedding {}",
                ck.config.state_dim,
                ck.config.lang_dim,
                ck.features.dim(),
                ck.embed_dim
            ))));
        }
        Ok(ck)
    }
}
