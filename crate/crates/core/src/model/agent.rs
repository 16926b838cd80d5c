//! Rollout policy wrapping a trained model.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureSpec;
use super::transformer::{Model, SeqItem, SeqStep};
use crate::embed::Embedder;
use crate::env::{action_index, action_set, Action, Env, History};
use crate::expert::{Policy, PolicyError};
use crate::util::{rng_for, Stream};

/// Return-to-go the agent is conditioned on at the first step.
pub const DEFAULT_TARGET_RTG: f64 = 1.5;

pub struct Agent {
    model: Arc<Model>,
    spec: FeatureSpec,
    embedder: Embedder,
    pub target_rtg: f64,
    /// 0 means greedy argmax; otherwise softmax sampling at this temperature.
    pub temperature: f64,
    rng: ChaCha8Rng,
    lang_cache: HashMap<String, Vec<f64>>,
}

impl Agent {
    pub fn new(model: Arc<Model>, spec: FeatureSpec, embedder: Embedder) -> Self {
        Agent {
            model,
            spec,
            embedder,
            target_rtg: DEFAULT_TARGET_RTG,
            temperature: 0.0,
            rng: rng_for(0, Stream::Train),
            lang_cache: HashMap::new(),
        }
    }

    pub fn with_sampling(mut self, temperature: f64, seed: u64) -> Self {
        self.temperature = temperature;
        self.rng = rng_for(seed, Stream::Train);
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn lang(&mut self, text: &str) -> Vec<f64> {
        if let Some(v) = self.lang_cache.get(text) {
            return v.clone();
        }
        let v = self.embedder.embed(text);
        self.lang_cache.insert(text.to_string(), v.clone());
        v
    }

    /// The inference window for the current step of `history`.
    pub fn context(&mut self, history: &History) -> SeqItem {
        let cfg = &self.model.config;
        let k = cfg.context_k;
        let entries = history.entries();
        let now = entries.len();
        let first = (now + 1).saturating_sub(k);
        let mut spent: f64 = entries[..first].iter().map(|e| e.reward).sum();
        let kind = self.spec.env_kind();
        let mut steps: Vec<SeqStep> = (0..k - (now + 1 - first)).map(|_| SeqStep::padding(cfg.state_dim, cfg.lang_dim)).collect();
        for (t, e) in entries.iter().enumerate().skip(first) {
            steps.push(SeqStep {
                valid: true,
                rtg: self.target_rtg - spent,
                state: self.spec.encode(&e.observation, &history.task),
                action: action_index(kind, e.action),
                lang: self.lang(&e.feedback),
                timestep: t,
            });
            spent += e.reward;
        }
        steps.push(SeqStep {
            valid: true,
            rtg: self.target_rtg - spent,
            state: self.spec.encode(history.current(), &history.task),
            action: None,
            lang: self.lang(history.current_feedback()),
            timestep: now,
        });
        let task = self.lang(&history.task.text);
        SeqItem { task, steps }
    }

    /// Logits for the current step.
    pub fn logits(&mut self, history: &History) -> Result<Vec<f64>, PolicyError> {
        let item = self.context(history);
        let out = self.model.logits(std::slice::from_ref(&item)).map_err(|e| PolicyError::Model(e.to_string()))?;
        let a = self.model.config.action_count;
        Ok(out[out.len() - a..].to_vec())
    }
}

impl Policy for Agent {
    fn act(&mut self, env: &Env, history: &History) -> Result<Action, PolicyError> {
        let actions = action_set(env.kind());
        if env.kind() != self.spec.env_kind() || actions.len() != self.model.config.action_count {
            return Err(PolicyError::Model(format!(
                "model expects {} actions in {}, environment is {} with {}",
                self.model.config.action_count,
                self.spec.env_kind().name(),
                env.kind().name(),
                actions.len()
            )));
        }
        let logits = self.logits(history)?;
        let idx = if self.temperature > 0.0 {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| ((l - max) / self.temperature).exp()).collect();
            let mut u = self.rng.gen::<f64>() * w.iter().sum::<f64>();
            let mut pick = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    pick = i;
                    break;
                }
                u -= wi;
            }
            pick
        } else {
            // First maximum wins ties.
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        };
        Ok(actions[idx])
    }

    fn is_expert(&self) -> bool {
        false
    }
}
