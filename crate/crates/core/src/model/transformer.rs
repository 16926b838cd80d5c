//! Causal decoder over interleaved return, language, state and action tokens
//! with a task-description prefix token.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::{Param, Tape, Var};
use crate::util::{rng_for, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Tokens per timestep, in sequence order.
pub const TOKENS_PER_STEP: usize = 4;
/// Offsets of each channel within a timestep. Language precedes the state
/// token so the prediction read at the state token sees the current
/// feedback, and the action comes last so it is never visible to its own
/// prediction.
pub const RTG_SLOT: usize = 0;
pub const LANG_SLOT: usize = 1;
pub const STATE_SLOT: usize = 2;
pub const ACTION_SLOT: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub context_k: usize,
    pub dropout: f64,
    pub action_count: usize,
    pub state_dim: usize,
    pub lang_dim: usize,
    /// Largest timestep with its own positional embedding; later steps share it.
    pub max_timestep: usize,
    pub rtg_scale: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.context_k == 0 {
            return bad("context_k must be at least 1");
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.action_count < 2 || self.state_dim == 0 || self.lang_dim == 0 {
            return bad("action_count, state_dim and lang_dim must be positive (at least two actions)");
        }
        if self.rtg_scale <= 0.0 {
            return bad("rtg_scale must be positive");
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        TOKENS_PER_STEP * self.context_k + 1
    }
}

/// One training or inference window.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqItem {
    pub task: Vec<f64>,
    /// Exactly `context_k` entries; padding steps have `valid == false` and
    /// sit at the front.
    pub steps: Vec<SeqStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqStep {
    pub valid: bool,
    pub rtg: f64,
    pub state: Vec<f64>,
    /// Action taken; `None` for the step being predicted at inference.
    pub action: Option<usize>,
    pub lang: Vec<f64>,
    pub timestep: usize,
}

impl SeqStep {
    pub fn padding(state_dim: usize, lang_dim: usize) -> Self {
        SeqStep { valid: false, rtg: 0.0, state: vec![0.0; state_dim], action: None, lang: vec![0.0; lang_dim], timestep: 0 }
    }
}

/// Weight-holding decoder. Parameter order is fixed by construction and is
/// the order used in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

struct Ids {
    rtg_w: usize,
    rtg_b: usize,
    state_w: usize,
    state_b: usize,
    act_w: usize,
    act_b: usize,
    lang_w: usize,
    lang_b: usize,
    task_w: usize,
    task_b: usize,
    pos: usize,
    ln_e: (usize, usize),
    layers: Vec<LayerIds>,
    ln_f: (usize, usize),
    head_w: usize,
    head_b: usize,
}

struct LayerIds {
    ln1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    ln2: (usize, usize),
    fc: (usize, usize),
    out: (usize, usize),
}

fn ids(n_layers: usize) -> Ids {
    let mut i = 0;
    let mut next = || {
        i += 1;
        i - 1
    };
    let (rtg_w, rtg_b, state_w, state_b, act_w, act_b) = (next(), next(), next(), next(), next(), next());
    let (lang_w, lang_b, task_w, task_b, pos) = (next(), next(), next(), next(), next());
    let ln_e = (next(), next());
    let layers = (0..n_layers)
        .map(|_| LayerIds {
            ln1: (next(), next()),
            qkv: (next(), next()),
            proj: (next(), next()),
            ln2: (next(), next()),
            fc: (next(), next()),
            out: (next(), next()),
        })
        .collect();
    let ln_f = (next(), next());
    let (head_w, head_b) = (next(), next());
    Ids { rtg_w, rtg_b, state_w, state_b, act_w, act_b, lang_w, lang_b, task_w, task_b, pos, ln_e, layers, ln_f, head_w, head_b }
}

impl Model {
    /// Fresh weights: N(0, 0.02) matrices (residual projections scaled by
    /// 1/sqrt(2·layers)), zero biases, unit layer-norm gains. The language
    /// projection starts at zero so a model trained without feedback stays
    /// blind to any text it is shown later.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng: ChaCha8Rng = rng_for(config.init_seed, Stream::Init);
        let d = config.d_model;
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let resid = Normal::new(0.0, 0.02 / (2.0 * config.n_layers as f64).sqrt()).expect("valid std");
        let mut mat = |name: &str, r: usize, c: usize, dist: &Normal<f64>| Param {
            name: name.to_string(),
            rows: r,
            cols: c,
            value: (0..r * c).map(|_| dist.sample(&mut rng)).collect(),
        };
        let mut params = vec![
            mat("embed.rtg.w", 1, d, &normal),
            Param::zeros("embed.rtg.b", 1, d),
            mat("embed.state.w", config.state_dim, d, &normal),
            Param::zeros("embed.state.b", 1, d),
            mat("embed.action.w", config.action_count, d, &normal),
            Param::zeros("embed.action.b", 1, d),
            Param::zeros("embed.lang.w", config.lang_dim, d),
            Param::zeros("embed.lang.b", 1, d),
            mat("embed.task.w", config.lang_dim, d, &normal),
            Param::zeros("embed.task.b", 1, d),
            mat("embed.pos", config.max_timestep + 2, d, &normal),
            Param::filled("embed.ln.g", 1, d, 1.0),
            Param::zeros("embed.ln.b", 1, d),
        ];
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            params.push(Param::filled(&p("ln1.g"), 1, d, 1.0));
            params.push(Param::zeros(&p("ln1.b"), 1, d));
            params.push(mat(&p("attn.qkv.w"), d, 3 * d, &normal));
            params.push(Param::zeros(&p("attn.qkv.b"), 1, 3 * d));
            params.push(mat(&p("attn.proj.w"), d, d, &resid));
            params.push(Param::zeros(&p("attn.proj.b"), 1, d));
            params.push(Param::filled(&p("ln2.g"), 1, d, 1.0));
            params.push(Param::zeros(&p("ln2.b"), 1, d));
            params.push(mat(&p("mlp.fc.w"), d, 4 * d, &normal));
            params.push(Param::zeros(&p("mlp.fc.b"), 1, 4 * d));
            params.push(mat(&p("mlp.proj.w"), 4 * d, d, &resid));
            params.push(Param::zeros(&p("mlp.proj.b"), 1, d));
        }
        params.push(Param::filled("ln_f.g", 1, d, 1.0));
        params.push(Param::zeros("ln_f.b", 1, d));
        params.push(mat("head.w", d, config.action_count, &normal));
        params.push(Param::zeros("head.b", 1, config.action_count));
        Ok(Model { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Checks that parameter names and shapes match a freshly built model.
    pub fn check_layout(&self) -> Result<(), ModelError> {
        let fresh = Model::new(ModelConfig { init_seed: 0, ..self.config.clone() })?;
        if fresh.params.len() != self.params.len() {
            return Err(ModelError::Shape(format!("{} tensors, expected {}", self.params.len(), fresh.params.len())));
        }
        for (a, b) in self.params.iter().zip(&fresh.params) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.value.len() != a.rows * a.cols {
                return Err(ModelError::Shape(format!(
                    "tensor {} is {}x{}, expected {} {}x{}",
                    a.name, a.rows, a.cols, b.name, b.rows, b.cols
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns action logits of shape
    /// `[items·K, action_count]`, row `b·K + t` for step `t` of item `b`.
    /// Dropout is active only when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, items: &[SeqItem], mut rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let c = &self.config;
        let (k, d) = (c.context_k, c.d_model);
        let b = items.len();
        let seq = c.seq_len();
        for it in items {
            if it.steps.len() != k || it.task.len() != c.lang_dim {
                return Err(ModelError::Shape(format!("item has {} steps / task dim {}", it.steps.len(), it.task.len())));
            }
            for s in &it.steps {
                if s.state.len() != c.state_dim || s.lang.len() != c.lang_dim {
                    return Err(ModelError::Shape(format!(
                        "step has state dim {} / language dim {}, expected {} / {}",
                        s.state.len(),
                        s.lang.len(),
                        c.state_dim,
                        c.lang_dim
                    )));
                }
                if s.action.is_some_and(|a| a >= c.action_count) {
                    return Err(ModelError::Shape(format!("action index out of range {}", c.action_count)));
                }
            }
        }
        let ids = ids(c.n_layers);
        let p: Vec<Var> = self.params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();

        let n = b * k;
        let mut rtg = Vec::with_capacity(n);
        let mut state = Vec::with_capacity(n * c.state_dim);
        let mut act = vec![0.0; n * c.action_count];
        let mut lang = Vec::with_capacity(n * c.lang_dim);
        let mut task = Vec::with_capacity(b * c.lang_dim);
        let mut pos_idx = vec![0usize; b * seq];
        let mut key_valid = vec![false; b * seq];
        for (bi, it) in items.iter().enumerate() {
            task.extend_from_slice(&it.task);
            key_valid[bi * seq] = true;
            for (t, s) in it.steps.iter().enumerate() {
                let row = bi * k + t;
                rtg.push(s.rtg / c.rtg_scale);
                state.extend_from_slice(&s.state);
                if let Some(a) = s.action {
                    act[row * c.action_count + a] = 1.0;
                }
                lang.extend_from_slice(&s.lang);
                let pos = 1 + s.timestep.min(c.max_timestep);
                for slot in 0..TOKENS_PER_STEP {
                    let tok = bi * seq + 1 + TOKENS_PER_STEP * t + slot;
                    pos_idx[tok] = pos;
                    key_valid[tok] = s.valid;
                }
            }
        }
        let rows_for = |slot: usize| -> Vec<usize> {
            (0..b).flat_map(|bi| (0..k).map(move |t| bi * seq + 1 + TOKENS_PER_STEP * t + slot)).collect()
        };

        let x_rtg = tape.input(n, 1, rtg);
        let x_state = tape.input(n, c.state_dim, state);
        let x_act = tape.input(n, c.action_count, act);
        let x_lang = tape.input(n, c.lang_dim, lang);
        let x_task = tape.input(b, c.lang_dim, task);
        let e_rtg = tape.linear(x_rtg, p[ids.rtg_w], p[ids.rtg_b]);
        let e_state = tape.linear(x_state, p[ids.state_w], p[ids.state_b]);
        let e_act = tape.linear(x_act, p[ids.act_w], p[ids.act_b]);
        let e_lang = tape.linear(x_lang, p[ids.lang_w], p[ids.lang_b]);
        let e_task = tape.linear(x_task, p[ids.task_w], p[ids.task_b]);
        let tokens = tape.assemble(
            b * seq,
            d,
            vec![
                (e_task, (0..b).map(|bi| bi * seq).collect()),
                (e_rtg, rows_for(RTG_SLOT)),
                (e_lang, rows_for(LANG_SLOT)),
                (e_state, rows_for(STATE_SLOT)),
                (e_act, rows_for(ACTION_SLOT)),
            ],
        );
        let pos = tape.gather(p[ids.pos], pos_idx);
        let mut x = tape.add(tokens, pos);
        x = tape.layer_norm(x, p[ids.ln_e.0], p[ids.ln_e.1]);
        x = tape.dropout(x, c.dropout, rng.as_deref_mut());

        for l in &ids.layers {
            let h = tape.layer_norm(x, p[l.ln1.0], p[l.ln1.1]);
            let qkv = tape.linear(h, p[l.qkv.0], p[l.qkv.1]);
            let a = tape.attention(qkv, b, seq, c.n_heads, &key_valid);
            let a = tape.linear(a, p[l.proj.0], p[l.proj.1]);
            let a = tape.dropout(a, c.dropout, rng.as_deref_mut());
            x = tape.add(x, a);
            let h = tape.layer_norm(x, p[l.ln2.0], p[l.ln2.1]);
            let h = tape.linear(h, p[l.fc.0], p[l.fc.1]);
            let h = tape.gelu(h);
            let h = tape.linear(h, p[l.out.0], p[l.out.1]);
            let h = tape.dropout(h, c.dropout, rng.as_deref_mut());
            x = tape.add(x, h);
        }
        let x = tape.layer_norm(x, p[ids.ln_f.0], p[ids.ln_f.1]);
        let at_state = tape.gather(x, rows_for(STATE_SLOT));
        Ok(tape.linear(at_state, p[ids.head_w], p[ids.head_b]))
    }

    /// Logits without recording gradients, as a flat `[items·K, A]` buffer.
    pub fn logits(&self, items: &[SeqItem]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, items, None)?;
        Ok(tape.value(out).to_vec())
    }

    /// Masked cross-entropy over valid steps with an action target.
    pub fn loss(&self, tape: &mut Tape, items: &[SeqItem], rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let logits = self.forward(tape, items, rng)?;
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for it in items {
            for s in &it.steps {
                targets.push(s.action.unwrap_or(0));
                weights.push(if s.valid && s.action.is_some() { 1.0 } else { 0.0 });
            }
        }
        Ok(tape.cross_entropy(logits, targets, weights))
    }
}
