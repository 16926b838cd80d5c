//! Run configuration: one JSON document per run. Values are layered as
//! preset defaults, then the config file, then `TEACHABLE__SECTION__KEY`
//! environment variables, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::DataConfig;
use crate::embed::{Embedder, DEFAULT_DIM};
use crate::env::{EnvConfig, EnvKind};
use crate::eval::studies::{ModelShape, StudyConfig};
use crate::eval::EvalConfig;
use crate::feedback::{FeedbackMode, OnlineProviderConfig};
use crate::model::{AdaptConfig, Preset, TrainConfig};
use crate::util::to_json_pretty;

/// Prefix of environment overrides; path segments are separated by `__`.
pub const ENV_PREFIX: &str = "TEACHABLE__";
/// File name of the resolved config written next to every output.
pub const RESOLVED_NAME: &str = "resolved_config.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?} (desk, homegrid-full)")]
    Preset(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub episodes: usize,
    pub feedback_mode: FeedbackMode,
    pub noise_rate: [f64; 2],
    pub seed: u64,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock { episodes: 500, feedback_mode: "H+F-pool".parse().expect("mode"), noise_rate: [0.10, 0.20], seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedBlock {
    pub dim: usize,
    /// Optional precomputed sentence table; misses fall back to hashing.
    pub table: Option<PathBuf>,
}

impl Default for EmbedBlock {
    fn default() -> Self {
        EmbedBlock { dim: DEFAULT_DIM, table: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptBlock {
    pub optim: AdaptConfig,
    /// Episodes fine-tuned on by `adapt`.
    pub shots: usize,
    /// Shot counts swept by the adaptation study.
    pub shot_grid: Vec<usize>,
    /// Size of the adaptation dataset collected by the study.
    pub episodes: usize,
}

impl Default for AdaptBlock {
    fn default() -> Self {
        AdaptBlock { optim: Preset::Desk.adapt_config(), shots: 20, shot_grid: vec![0, 5, 10, 20], episodes: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub provider: OnlineProviderConfig,
    pub runs: usize,
    pub seeds_per_run: usize,
    pub master_seed: u64,
    /// Evaluate with the checkpoint's own training feedback instead of
    /// `provider.mode`.
    pub aligned: bool,
}

impl Default for EvalBlock {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalBlock {
            provider: OnlineProviderConfig::new("H+F-pool".parse().expect("mode"), 5),
            runs: e.runs,
            seeds_per_run: e.seeds_per_run,
            master_seed: e.master_seed,
            aligned: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyBlock {
    pub gridhome: EnvConfig,
    pub courier: EnvConfig,
    pub probabilities: Vec<f64>,
    pub mistake_runs: usize,
    pub mistake_window: usize,
}

impl Default for StudyBlock {
    fn default() -> Self {
        let s = StudyConfig::default();
        StudyBlock {
            gridhome: s.gridhome,
            courier: s.courier,
            probabilities: s.probabilities,
            mistake_runs: s.mistake_runs,
            mistake_window: s.mistake_window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentBlock {
    pub variants_gridhome: usize,
    pub variants_courier: usize,
    /// Plain-HTTP completion endpoint; the built-in paraphraser is used
    /// when absent.
    pub endpoint: Option<String>,
}

impl Default for AugmentBlock {
    fn default() -> Self {
        AugmentBlock { variants_gridhome: 70, variants_courier: 80, endpoint: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Pool file; the built-in pools are used when absent.
    pub pool: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub results: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            pool: None,
            templates: None,
            dataset: "runs/data".into(),
            checkpoint: "runs/model.json".into(),
            results: "runs/results".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: String,
    pub env: EnvConfig,
    pub data: DataBlock,
    pub embed: EmbedBlock,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub adapt: AdaptBlock,
    pub eval: EvalBlock,
    pub study: StudyBlock,
    pub augment: AugmentBlock,
    pub paths: Paths,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn for_preset(p: Preset) -> Self {
        RunConfig {
            preset: p.name().into(),
            env: EnvConfig::default_for(EnvKind::GridHome),
            data: DataBlock::default(),
            embed: EmbedBlock::default(),
            model: ModelShape::from_preset(p),
            train: p.train_config(),
            adapt: AdaptBlock { optim: p.adapt_config(), ..AdaptBlock::default() },
            eval: EvalBlock::default(),
            study: StudyBlock::default(),
            augment: AugmentBlock::default(),
            paths: Paths::default(),
            workers: 1,
        }
    }

    /// Resolves the layered config. `preset` overrides the file's own
    /// `preset` key; environment variables come from `vars`.
    pub fn resolve(
        file: Option<&Path>,
        preset: Option<&str>,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let file_value = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    reason: format!("{e}; pass an existing JSON file to --config"),
                })?;
                let v: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    reason: format!("not valid JSON: {e}"),
                })?;
                if !v.is_object() {
                    return Err(ConfigError::Invalid(format!("{} must hold a JSON object", p.display())));
                }
                v
            }
            None => Value::Object(Default::default()),
        };
        let preset_name = preset
            .map(str::to_string)
            .or_else(|| file_value.get("preset").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| "desk".into());
        let p = Preset::parse(&preset_name).ok_or_else(|| ConfigError::Preset(preset_name.clone()))?;
        let mut value = serde_json::to_value(RunConfig::for_preset(p)).expect("defaults serialize");
        merge(&mut value, file_value);
        for (key, raw) in vars {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            if path.iter().any(|s| s.is_empty()) {
                return Err(ConfigError::Invalid(format!("malformed override variable {key}")));
            }
            let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
            set_path(&mut value, &path, parsed).map_err(|e| ConfigError::Invalid(format!("{key}: {e}")))?;
        }
        value["preset"] = Value::String(p.name().into());
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| bad(&e))?;
        self.study.gridhome.validate().map_err(|e| bad(&e))?;
        self.study.courier.validate().map_err(|e| bad(&e))?;
        if self.study.gridhome.kind() != EnvKind::GridHome || self.study.courier.kind() != EnvKind::Courier {
            return Err(ConfigError::Invalid("study.gridhome and study.courier must name their own kinds".into()));
        }
        self.data_config().validate().map_err(|e| bad(&e))?;
        self.train.validate().map_err(|e| bad(&e))?;
        self.eval.provider.validate().map_err(|e| bad(&e))?;
        if self.embed.dim == 0 {
            return Err(ConfigError::Invalid("embed.dim must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.eval.runs == 0 || self.eval.seeds_per_run == 0 {
            return Err(ConfigError::Invalid("eval.runs and eval.seeds_per_run must be positive".into()));
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            noise_rate: self.data.noise_rate,
            ..DataConfig::new(self.env.clone(), self.data.episodes, self.data.feedback_mode, self.data.seed)
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            runs: self.eval.runs,
            seeds_per_run: self.eval.seeds_per_run,
            master_seed: self.eval.master_seed,
            workers: self.workers,
        }
    }

    pub fn embedder(&self) -> Result<Embedder, ConfigError> {
        match &self.embed.table {
            None => Ok(Embedder::hashed(self.embed.dim)),
            Some(p) => Embedder::with_table(self.embed.dim, p)
                .map_err(|e| ConfigError::Io { path: p.display().to_string(), reason: e.to_string() }),
        }
    }

    pub fn study_config(&self) -> StudyConfig {
        StudyConfig {
            gridhome: self.study.gridhome.clone(),
            courier: self.study.courier.clone(),
            episodes: self.data.episodes,
            noise_rate: self.data.noise_rate,
            data_seed: self.data.seed,
            embed_dim: self.embed.dim,
            model: self.model.clone(),
            train: self.train.clone(),
            adapt: self.adapt.optim.clone(),
            adapt_episodes: self.adapt.episodes,
            shots: self.adapt.shot_grid.clone(),
            eval: self.eval_config(),
            provider_seed: self.eval.provider.rng_seed,
            probabilities: self.study.probabilities.clone(),
            mistake_runs: self.study.mistake_runs,
            mistake_window: self.study.mistake_window,
            workers: self.workers,
        }
    }

    /// Writes the resolved config as `resolved_config.json` inside `dir`.
    pub fn write_next_to(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let io = |e: std::io::Error| ConfigError::Io { path: dir.display().to_string(), reason: e.to_string() };
        fs::create_dir_all(dir).map_err(io)?;
        let p = dir.join(RESOLVED_NAME);
        fs::write(&p, to_json_pretty(self).expect("config serializes")).map_err(io)?;
        Ok(p)
    }
}

/// Deep-merges `over` into `base`. Tagged objects whose `kind` changes are
/// replaced wholesale so fields of the old variant do not leak through.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let kind_changed = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, path: &[String], v: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = root;
    for seg in parents {
        let obj = cur.as_object_mut().ok_or_else(|| format!("{seg:?} is not inside an object"))?;
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| format!("{last:?} is not inside an object"))?;
    match obj.get_mut(last) {
        Some(slot) => merge(slot, v),
        None => {
            obj.insert(last.clone(), v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn no_vars() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults_resolve_and_round_trip() {
        let cfg = RunConfig::resolve(None, None, no_vars()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = serde_json::from_str(&to_json_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"train": {{"lr": 0.01, "learning_rate": 1}}}}"#).unwrap();
        let err = RunConfig::resolve(Some(f.path()), None, no_vars()).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn layers_apply_in_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"train": {{"lr": 0.01, "steps": 7}}, "env": {{"kind": "courier"}}}}"#).unwrap();
        let vars = vec![
            ("TEACHABLE__TRAIN__STEPS".to_string(), "9".to_string()),
            ("TEACHABLE__EVAL__PROVIDER__SPEAK_PROBABILITY".to_string(), "0.5".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = RunConfig::resolve(Some(f.path()), None, vars).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.steps, 9);
        assert_eq!(cfg.eval.provider.speak_probability, 0.5);
        assert_eq!(cfg.env.kind(), EnvKind::Courier);
    }

    #[test]
    fn full_preset_loads_its_values() {
        let cfg = RunConfig::resolve(None, Some("homegrid-full"), no_vars()).unwrap();
        assert_eq!(cfg.model.d_model, 128);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.adapt.optim.lr, 1e-5);
        assert!(matches!(RunConfig::resolve(None, Some("huge"), no_vars()), Err(ConfigError::Preset(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::resolve(Some(Path::new("/nonexistent/run.json")), None, no_vars()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.json"));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let vars = vec![("TEACHABLE__WORKERS".to_string(), "0".to_string())];
        assert!(RunConfig::resolve(None, None, vars).is_err());
        let vars = vec![("TEACHABLE__EVAL__PROVIDER__SPEAK_PROBABILITY".to_string(), "1.5".to_string())];
        assert!(RunConfig::resolve(None, None, vars).is_err());
    }
}
