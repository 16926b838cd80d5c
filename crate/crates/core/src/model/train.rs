//! Dataset encoding, window sampling and the AdamW training loop used for
//! both pretraining and few-shot adaptation.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::FeatureSpec;
use super::tensor::Tape;
use super::transformer::{Model, ModelError, SeqItem, SeqStep};
use crate::data::EpisodeRecord;
use crate::embed::Embedder;
use crate::util::{rng_for, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}\n{diagnostics}")]
    NonFinite { step: usize, diagnostics: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Log the running loss every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            steps: 1500,
            batch_size: 32,
            warmup_steps: 100,
            weight_decay: 1e-4,
            grad_clip: 0.25,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.grad_clip <= 0.0 || self.weight_decay < 0.0 {
            return bad("grad_clip must be positive and weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Learning rate after linear warmup.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

/// An episode with states, feedback and task text already turned into
/// vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedEpisode {
    pub task: Vec<f64>,
    pub steps: Vec<SeqStep>,
}

impl EncodedEpisode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Encodes recorded episodes. Identical utterances share one embedding call.
/// With `drop_language` the feedback channel is zeroed, which is how the
/// no-language condition sees a dataset.
pub fn encode_episodes(
    episodes: &[EpisodeRecord],
    spec: &FeatureSpec,
    embedder: &Embedder,
    drop_language: bool,
) -> Vec<EncodedEpisode> {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let zero = vec![0.0; embedder.dim()];
    episodes
        .iter()
        .map(|ep| {
            let task = embedder.embed(&ep.task_description.text);
            let steps = ep
                .steps
                .iter()
                .enumerate()
                .map(|(t, s)| SeqStep {
                    valid: true,
                    rtg: s.rtg,
                    state: spec.encode(&s.state, &ep.task_description),
                    action: Some(s.action),
                    lang: if drop_language {
                        zero.clone()
                    } else {
                        cache.entry(s.language.as_str()).or_insert_with(|| embedder.embed(&s.language)).clone()
                    },
                    timestep: t,
                })
                .collect();
            EncodedEpisode { task, steps }
        })
        .collect()
}

/// Window of `k` steps from a uniformly drawn start, left-padded when the
/// episode ends before the window is full.
pub fn sample_subsequence(ep: &EncodedEpisode, k: usize, rng: &mut ChaCha8Rng) -> SeqItem {
    assert!(!ep.is_empty(), "cannot sample from an empty episode");
    let start = rng.gen_range(0..ep.len());
    window(ep, start, k)
}

/// Steps `start..start+k` (clipped to the episode), left-padded to `k`.
pub fn window(ep: &EncodedEpisode, start: usize, k: usize) -> SeqItem {
    let end = (start + k).min(ep.len());
    let (sd, ld) = (ep.steps[0].state.len(), ep.steps[0].lang.len());
    let mut steps: Vec<SeqStep> = (0..k - (end - start)).map(|_| SeqStep::padding(sd, ld)).collect();
    steps.extend_from_slice(&ep.steps[start..end]);
    SeqItem { task: ep.task.clone(), steps }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let z: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState { step: 0, m: z.clone(), v: z }
    }
}

fn decays(name: &str) -> bool {
    name.ends_with(".w") && !name.starts_with("embed.")
}

fn diagnostics(model: &Model, grads: &[Vec<f64>], loss: f64) -> String {
    let mut s = format!("loss = {loss}\n");
    for (p, g) in model.params.iter().zip(grads) {
        let wn = p.value.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bad = p.value.iter().chain(g).filter(|v| !v.is_finite()).count();
        s.push_str(&format!("  {:<22} |w| = {wn:.4e}  |g| = {gn:.4e}  non-finite = {bad}\n", p.name));
    }
    s
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    batch: &[SeqItem],
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let loss_var = model.loss(&mut tape, batch, Some(rng))?;
    let loss = tape.value(loss_var)[0];
    let mut grads = tape.backward(loss_var, model.params.len());
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite { step: opt.step, diagnostics: diagnostics(model, &grads, loss) });
    }
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > cfg.grad_clip {
        let s = cfg.grad_clip / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    let lr = cfg.lr_at(opt.step);
    opt.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(opt.step as i32);
    for (i, p) in model.params.iter_mut().enumerate() {
        let wd = if decays(&p.name) { cfg.weight_decay } else { 0.0 };
        let (m, v, g) = (&mut opt.m[i], &mut opt.v[i], &grads[i]);
        for j in 0..p.value.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps);
            p.value[j] -= lr * (update + wd * p.value[j]);
        }
    }
    Ok(loss)
}

/// Loss trace of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the last `n` losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Trains in place for `cfg.steps` steps on windows sampled uniformly over
/// episodes.
pub fn train(model: &mut Model, episodes: &[EncodedEpisode], cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    let episodes: Vec<&EncodedEpisode> = episodes.iter().filter(|e| !e.is_empty()).collect();
    if episodes.is_empty() {
        return Err(TrainError::Config("no non-empty episodes to train on".into()));
    }
    let mut rng = rng_for(cfg.seed, Stream::Train);
    let mut opt = AdamState::new(model);
    let k = model.config.context_k;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<SeqItem> = (0..cfg.batch_size)
            .map(|_| {
                let ep = episodes[rng.gen_range(0..episodes.len())];
                sample_subsequence(ep, k, &mut rng)
            })
            .collect();
        let loss = train_step(model, &mut opt, cfg, &batch, &mut rng)?;
        log.losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!("step {:>5}  loss {:.4}", step + 1, log.tail_mean(cfg.log_every));
        }
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { lr: 1e-5, epochs: 40, batch_size: 16, seed: 0 }
    }
}

/// Fine-tunes a copy of `pretrained` on the first `shots` episodes. Each
/// epoch draws one window per step of data, so the update count scales
/// with the amount of adaptation data.
pub fn adapt(
    pretrained: &Model,
    episodes: &[EncodedEpisode],
    shots: usize,
    cfg: &AdaptConfig,
) -> Result<(Model, TrainLog), TrainError> {
    if shots == 0 {
        return Ok((pretrained.clone(), TrainLog::default()));
    }
    if shots > episodes.len() {
        return Err(TrainError::Config(format!("{shots} shots requested but only {} episodes available", episodes.len())));
    }
    let data = &episodes[..shots];
    let total: usize = data.iter().map(EncodedEpisode::len).sum();
    let per_epoch = total.div_ceil(cfg.batch_size).max(1);
    let tc = TrainConfig {
        lr: cfg.lr,
        steps: cfg.epochs * per_epoch,
        batch_size: cfg.batch_size,
        warmup_steps: 0,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let mut model = pretrained.clone();
    let log = train(&mut model, data, &tc)?;
    Ok((model, log))
}
