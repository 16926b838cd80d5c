//! Offline demonstration datasets: perturbed-expert rollouts annotated with
//! per-step feedback and returns-to-go, stored as JSON lines next to a
//! manifest whose hash covers the episode file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{action_index, EnvConfig, EnvError, EnvKind, EnvSeed, History, Observation, TaskDescription};
use crate::env::Env;
use crate::expert::{Expert, PerturbationConfig, Perturbed, Policy, PolicyError};
use crate::feedback::{FeedbackError, FeedbackMode, OnlineProvider, OnlineProviderConfig, Pool};
use crate::util::{derive_seed, rng_for, sha256_hex, to_json_line, to_json_pretty, Stream};

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR: &str = concat!("teachable/", env!("CARGO_PKG_VERSION"));
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Attempts per episode slot before giving up on a planner failure.
const MAX_RESAMPLES: u64 = 16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("dataset integrity check failed: {0}")]
    Integrity(String),
    #[error("dataset schema version {found} is not supported (expected {expected}); regenerate it with `teachable gendata`")]
    Schema { found: u32, expected: u32 },
    #[error("invalid data config: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |e| DataError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub rtg: f64,
    pub state: Observation,
    /// Index into the environment's action set.
    pub action: usize,
    /// What the expert would have done; kept for feedback audits.
    pub expert_action: usize,
    pub language: String,
    pub raw_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub env_kind: EnvKind,
    pub feedback_mode: FeedbackMode,
    pub noise_rate: f64,
    pub success: bool,
    pub task_description: TaskDescription,
    pub steps: Vec<TrajectoryStep>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Suffix sums `rtg[t] = r[t] + gamma * rtg[t + 1]`.
pub fn compute_rtg(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Rolls out `actor` for one episode. The expert behind `provider` only
/// supplies reference actions for the feedback; the actor drives the env.
pub fn collect_episode(
    env_cfg: &EnvConfig,
    actor: &mut dyn Policy,
    provider: &mut OnlineProvider,
    seed: u64,
) -> Result<(TaskDescription, Vec<TrajectoryStep>, bool), DataError> {
    let (mut env, obs, task) = Env::reset(env_cfg, EnvSeed(seed))?;
    let kind = env.kind();
    let mut history = History::new(task.clone(), obs);
    provider.reset();
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    let mut last = None;
    while !env.is_terminated() {
        let fb = provider.step(&env, last)?;
        history.set_feedback(fb.bundle.combined.clone());
        let a = actor.act(&env, &history)?;
        let state = history.current().clone();
        let r = env.step(a)?;
        steps.push(TrajectoryStep {
            rtg: 0.0,
            state,
            action: action_index(kind, a).expect("actor picks from the action set"),
            expert_action: action_index(kind, fb.advice.expert_action).expect("expert picks from the action set"),
            language: fb.bundle.combined,
            raw_reward: r.reward,
        });
        rewards.push(r.reward);
        history.commit(a, &r);
        last = Some(a);
    }
    let success = rewards.last().is_some_and(|&r| r >= 1.0);
    for (s, g) in steps.iter_mut().zip(compute_rtg(&rewards, env.limits().discount)) {
        s.rtg = g;
    }
    Ok((task, steps, success))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub env: EnvConfig,
    pub episodes: usize,
    pub feedback_mode: FeedbackMode,
    /// Per-episode noise rate is drawn uniformly from this range.
    pub noise_rate: [f64; 2],
    pub master_seed: u64,
}

impl DataConfig {
    pub fn new(env: EnvConfig, episodes: usize, feedback_mode: FeedbackMode, master_seed: u64) -> Self {
        DataConfig { env, episodes, feedback_mode, noise_rate: [0.10, 0.20], master_seed }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.env.validate()?;
        let [lo, hi] = self.noise_rate;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(DataError::Config(format!("noise_rate range [{lo}, {hi}] is not inside [0, 1]")));
        }
        if self.episodes == 0 {
            return Err(DataError::Config("episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator: String,
    pub env_kind: EnvKind,
    pub config: DataConfig,
    pub episode_count: usize,
    pub feedback_mode: FeedbackMode,
    pub noise_rate: [f64; 2],
    pub pool_hash: String,
    /// Seed actually used for each episode, after any resampling.
    pub episode_seeds: Vec<u64>,
    pub resampled: usize,
    pub success_rate: f64,
    pub episodes_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<EpisodeRecord>,
}

/// One episode slot: retries with derived seeds when the planner fails.
fn collect_slot(cfg: &DataConfig, pool: &Arc<Pool>, index: usize) -> Result<(EpisodeRecord, usize), DataError> {
    let base = cfg.episode_seed(index);
    let mut last_err = None;
    for attempt in 0..MAX_RESAMPLES {
        let seed = if attempt == 0 { base } else { derive_seed(base, attempt) };
        let [lo, hi] = cfg.noise_rate;
        let noise_rate = if hi > lo { rng_for(seed, Stream::Episode).gen_range(lo..hi) } else { lo };
        let mut actor = Perturbed::new(Expert::default(), PerturbationConfig { noise_rate, rng_seed: seed })?;
        let mut provider = OnlineProvider::new(
            OnlineProviderConfig::new(cfg.feedback_mode, seed),
            Arc::clone(pool),
            Expert::default(),
        )?;
        match collect_episode(&cfg.env, &mut actor, &mut provider, seed) {
            Ok((task_description, steps, success)) => {
                let rec = EpisodeRecord {
                    index,
                    seed,
                    env_kind: cfg.env.kind(),
                    feedback_mode: cfg.feedback_mode,
                    noise_rate,
                    success,
                    task_description,
                    steps,
                };
                return Ok((rec, attempt as usize));
            }
            Err(DataError::Policy(e)) | Err(DataError::Feedback(FeedbackError::Policy(e))) => {
                log::debug!("episode {index} attempt {attempt}: {e}; resampling");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(DataError::Policy(last_err.expect("at least one attempt")))
}

/// Collects the whole dataset. Workers take interleaved episode indices and
/// results are merged by index, so the output does not depend on `workers`.
pub fn build_dataset(cfg: &DataConfig, pool: Arc<Pool>, workers: usize) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let workers = workers.clamp(1, cfg.episodes);
    let mut slots: Vec<Option<Result<(EpisodeRecord, usize), DataError>>> = (0..cfg.episodes).map(|_| None).collect();
    if workers == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(collect_slot(cfg, &pool, i));
        }
    } else {
        let results: Vec<Vec<(usize, Result<(EpisodeRecord, usize), DataError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let pool = &pool;
                    s.spawn(move || {
                        (w..cfg.episodes).step_by(workers).map(|i| (i, collect_slot(cfg, pool, i))).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("collector thread panicked")).collect()
        });
        for (i, r) in results.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut resampled = 0;
    for slot in slots {
        let (rec, retries) = slot.expect("every slot collected")?;
        resampled += retries;
        episodes.push(rec);
    }
    let success_rate = episodes.iter().filter(|e| e.success).count() as f64 / episodes.len() as f64;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        generator: GENERATOR.to_string(),
        env_kind: cfg.env.kind(),
        config: cfg.clone(),
        episode_count: episodes.len(),
        feedback_mode: cfg.feedback_mode,
        noise_rate: cfg.noise_rate,
        pool_hash: pool.content_hash(),
        episode_seeds: episodes.iter().map(|e| e.seed).collect(),
        resampled,
        success_rate,
        episodes_sha256: String::new(),
    };
    Ok(Dataset { manifest, episodes })
}

impl Dataset {
    fn episodes_bytes(&self) -> Result<Vec<u8>, DataError> {
        let mut out = Vec::new();
        for e in &self.episodes {
            let line = to_json_line(e).map_err(|e| DataError::Integrity(format!("serializing episode: {e}")))?;
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Writes `episodes.jsonl` and `manifest.json` into `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let bytes = self.episodes_bytes()?;
        self.manifest.episodes_sha256 = sha256_hex(&bytes);
        self.manifest.episode_count = self.episodes.len();
        let ep_path = dir.join(EPISODES_FILE);
        fs::write(&ep_path, &bytes).map_err(io_err(&ep_path))?;
        let man_path = dir.join(MANIFEST_FILE);
        let man = to_json_pretty(&self.manifest).map_err(|e| DataError::Integrity(e.to_string()))?;
        fs::write(&man_path, man).map_err(io_err(&man_path))?;
        Ok(())
    }

    /// Loads a dataset, verifying schema version, hash and episode count
    /// before parsing any episode.
    pub fn load(dir: &Path) -> Result<Dataset, DataError> {
        let man_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&man_path).map_err(|e| DataError::Io {
            path: man_path.clone(),
            reason: format!("{e}; generate a dataset with `teachable gendata`"),
        })?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| DataError::Integrity(format!("manifest: {e}")))?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(DataError::Schema { found, expected: SCHEMA_VERSION });
        }
        let manifest: DatasetManifest =
            serde_json::from_value(raw).map_err(|e| DataError::Integrity(format!("manifest: {e}")))?;
        let ep_path = dir.join(EPISODES_FILE);
        let bytes = fs::read(&ep_path).map_err(io_err(&ep_path))?;
        let digest = sha256_hex(&bytes);
        if digest != manifest.episodes_sha256 {
            return Err(DataError::Integrity(format!(
                "{} has sha256 {digest}, manifest records {}",
                ep_path.display(),
                manifest.episodes_sha256
            )));
        }
        let text = String::from_utf8(bytes).map_err(|e| DataError::Integrity(e.to_string()))?;
        let episodes = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str::<EpisodeRecord>(l)
                    .map_err(|e| DataError::Integrity(format!("episode line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if episodes.len() != manifest.episode_count {
            return Err(DataError::Integrity(format!(
                "{} episodes on disk, manifest records {}",
                episodes.len(),
                manifest.episode_count
            )));
        }
        Ok(Dataset { manifest, episodes })
    }

    pub fn env_kind(&self) -> EnvKind {
        self.manifest.env_kind
    }
}
