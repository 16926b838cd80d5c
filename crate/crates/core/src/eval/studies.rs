//! End-to-end study pipelines: collect datasets, train one model per
//! feedback condition, and evaluate them under shared seed lists.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{difficulty_rank, efficiency_gain, mean, paired_reward_gap, polyfit2, spearman, std_dev, EpisodeResult, RunReport};
use super::rollout::{evaluate, EvalConfig};
use super::EvalError;
use crate::data::{build_dataset, DataConfig, Dataset};
use crate::embed::Embedder;
use crate::env::courier::CourierOrder;
use crate::env::gridhome::Event;
use crate::env::{Action, Env, EnvConfig, EnvKind, EnvSeed, History};
use crate::expert::{expert_steps_to_success, Expert, Policy};
use crate::feedback::{Corruption, FeedbackError, FeedbackMode, OnlineProvider, OnlineProviderConfig, Pool};
use crate::model::{
    adapt, encode_episodes, train, AdaptConfig, Agent, Checkpoint, CheckpointMeta, FeatureSpec, Model, ModelConfig, Preset,
    TrainConfig,
};
use crate::util::{derive_seed, rng_for, to_json_pretty, Stream};

/// Decoder shape shared by every condition; environment-dependent sizes are
/// filled in per environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub context_k: usize,
    pub dropout: f64,
    pub rtg_scale: f64,
    pub init_seed: u64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape::from_preset(Preset::Desk)
    }
}

impl ModelShape {
    pub fn from_preset(p: Preset) -> Self {
        let c = p.model_config(&EnvConfig::default_for(EnvKind::GridHome), 1);
        ModelShape {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            context_k: c.context_k,
            dropout: c.dropout,
            rtg_scale: c.rtg_scale,
            init_seed: c.init_seed,
        }
    }

    pub fn config_for(&self, env: &EnvConfig, lang_dim: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            context_k: self.context_k,
            dropout: self.dropout,
            rtg_scale: self.rtg_scale,
            init_seed: self.init_seed,
            ..Preset::Desk.model_config(env, lang_dim)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub gridhome: EnvConfig,
    /// Pretraining environment for courier; the adaptation task is the same
    /// world with the reversed order.
    pub courier: EnvConfig,
    pub episodes: usize,
    pub noise_rate: [f64; 2],
    pub data_seed: u64,
    pub embed_dim: usize,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub adapt_episodes: usize,
    pub shots: Vec<usize>,
    pub eval: EvalConfig,
    pub provider_seed: u64,
    pub probabilities: Vec<f64>,
    pub mistake_runs: usize,
    pub mistake_window: usize,
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            gridhome: EnvConfig::default_for(EnvKind::GridHome),
            courier: EnvConfig::default_for(EnvKind::Courier),
            episodes: 500,
            noise_rate: [0.10, 0.20],
            data_seed: 7,
            embed_dim: crate::embed::DEFAULT_DIM,
            model: ModelShape::default(),
            train: Preset::Desk.train_config(),
            adapt: Preset::Desk.adapt_config(),
            adapt_episodes: 20,
            shots: vec![0, 5, 10, 20],
            eval: EvalConfig::default(),
            provider_seed: 5,
            probabilities: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            mistake_runs: 500,
            mistake_window: 5,
            workers: 1,
        }
    }
}

impl StudyConfig {
    pub fn env(&self, kind: EnvKind) -> &EnvConfig {
        match kind {
            EnvKind::GridHome => &self.gridhome,
            EnvKind::Courier => &self.courier,
        }
    }

    /// Courier with only the reversed order sentence.
    pub fn courier_reversed(&self) -> EnvConfig {
        let mut env = self.courier.clone();
        if let EnvConfig::Courier(c) = &mut env {
            c.orders = vec![CourierOrder::GoalThenMessage];
        }
        env
    }

    fn eval(&self) -> EvalConfig {
        EvalConfig { workers: self.workers, ..self.eval.clone() }
    }

    /// Online teacher used for the main comparisons: pooled hindsight and
    /// foresight, speaking at every step.
    pub fn online_provider(&self) -> OnlineProviderConfig {
        OnlineProviderConfig::new(mode("H+F-pool"), self.provider_seed)
    }
}

fn mode(s: &str) -> FeedbackMode {
    s.parse().expect("valid mode literal")
}

/// Display label of a training condition.
pub fn condition_label(m: FeedbackMode) -> String {
    if m == FeedbackMode::NONE {
        return "no-language".into();
    }
    let s = m.to_string();
    match s.strip_suffix("-pool") {
        Some(base) => format!("pool-{base}"),
        None => format!("template-{s}"),
    }
}

/// A model trained under one feedback condition.
pub struct Trained {
    pub model: Arc<Model>,
    pub spec: FeatureSpec,
    pub mode: FeedbackMode,
    pub final_loss: f64,
    pub dataset_sha256: String,
}

/// Trains models on demand and caches them for reuse across studies.
pub struct Lab {
    pub cfg: StudyConfig,
    pub pool: Arc<Pool>,
    pub embedder: Embedder,
    models: HashMap<(EnvKind, FeedbackMode), Arc<Trained>>,
    checkpoint_dir: Option<PathBuf>,
}

impl Lab {
    pub fn new(cfg: StudyConfig, pool: Arc<Pool>) -> Self {
        let embedder = Embedder::hashed(cfg.embed_dim);
        Lab { cfg, pool, embedder, models: HashMap::new(), checkpoint_dir: None }
    }

    pub fn with_embedder(mut self, embedder: Embedder) -> Self {
        self.embedder = embedder;
        self
    }

    /// Also write every trained model as a checkpoint into `dir`.
    pub fn save_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn dataset(&self, env: &EnvConfig, mode: FeedbackMode, episodes: usize, seed: u64) -> Result<Dataset, EvalError> {
        let dc = DataConfig { noise_rate: self.cfg.noise_rate, ..DataConfig::new(env.clone(), episodes, mode, seed) };
        Ok(build_dataset(&dc, Arc::clone(&self.pool), self.cfg.workers)?)
    }

    /// The model trained on `kind`'s pretraining data under `mode`. Every
    /// condition shares trajectories, initial weights and batch order; only
    /// the feedback text differs.
    pub fn pretrained(&mut self, kind: EnvKind, mode: FeedbackMode) -> Result<Arc<Trained>, EvalError> {
        if let Some(t) = self.models.get(&(kind, mode)) {
            return Ok(Arc::clone(t));
        }
        let env = self.cfg.env(kind).clone();
        let ds = self.dataset(&env, mode, self.cfg.episodes, self.cfg.data_seed)?;
        let spec = FeatureSpec::for_env(&env);
        let enc = encode_episodes(&ds.episodes, &spec, &self.embedder, mode == FeedbackMode::NONE);
        let mut model = Model::new(self.cfg.model.config_for(&env, self.embedder.dim()))?;
        log::info!("training {} / {}", kind.name(), condition_label(mode));
        let log = train(&mut model, &enc, &self.cfg.train)?;
        let trained = Trained {
            model: Arc::new(model),
            spec,
            mode,
            final_loss: log.tail_mean(100),
            dataset_sha256: ds.manifest.episodes_sha256.clone(),
        };
        self.store(kind, &trained, None)?;
        let t = Arc::new(trained);
        self.models.insert((kind, mode), Arc::clone(&t));
        Ok(t)
    }

    fn store(&self, kind: EnvKind, t: &Trained, shots: Option<usize>) -> Result<(), EvalError> {
        let Some(dir) = &self.checkpoint_dir else { return Ok(()) };
        let name = match shots {
            Some(s) => format!("{}_{}_adapt{s}.json", kind.name(), condition_label(t.mode)),
            None => format!("{}_{}.json", kind.name(), condition_label(t.mode)),
        };
        let meta = CheckpointMeta {
            feedback_mode: t.mode.to_string(),
            dataset_sha256: t.dataset_sha256.clone(),
            train_steps: self.cfg.train.steps,
            final_loss: t.final_loss,
            adapted_shots: shots,
        };
        Checkpoint::new(&t.model, t.spec.clone(), self.embedder.dim(), meta).save(&dir.join(name))?;
        Ok(())
    }

    pub fn agent(&self, t: &Trained) -> Agent {
        Agent::new(Arc::clone(&t.model), t.spec.clone(), self.embedder.clone())
    }

    /// Evaluates `t` on `env` with the given teacher.
    pub fn evaluate(
        &self,
        label: &str,
        t: &Trained,
        env: &EnvConfig,
        provider: &OnlineProviderConfig,
    ) -> Result<Vec<EpisodeResult>, EvalError> {
        let factory = || -> Box<dyn Policy + Send> { Box::new(self.agent(t)) };
        evaluate(label, &factory, env, provider, &self.pool, &self.cfg.eval())
    }
}

/// An x/y series for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Everything a study produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub study: String,
    pub reports: Vec<RunReport>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeResult>,
    pub series: Vec<Series>,
    pub summary: serde_json::Value,
}

impl StudyOutput {
    fn new(study: &str) -> Self {
        StudyOutput { study: study.into(), reports: Vec::new(), episodes: Vec::new(), series: Vec::new(), summary: json!({}) }
    }

    fn push(&mut self, label: &str, rows: Vec<EpisodeResult>) -> RunReport {
        let r = RunReport::from_results(label, &rows);
        self.reports.push(r.clone());
        self.episodes.extend(rows);
        r
    }

    pub fn report(&self, condition: &str) -> Option<&RunReport> {
        self.reports.iter().find(|r| r.condition == condition)
    }

    pub fn rows(&self, condition: &str) -> Vec<EpisodeResult> {
        self.episodes.iter().filter(|e| e.condition == condition).cloned().collect()
    }

    /// Writes `<study>_episodes.csv`, `<study>_summary.json` (reports and
    /// summary) and `<study>_series.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |p: &Path, e: std::io::Error| EvalError::Io { path: p.display().to_string(), reason: e.to_string() };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut csv = String::from(EpisodeResult::CSV_HEADER);
        csv.push('\n');
        for e in &self.episodes {
            csv.push_str(&e.csv_row());
            csv.push('\n');
        }
        let p = dir.join(format!("{}_episodes.csv", self.study));
        fs::write(&p, csv).map_err(|e| io(&p, e))?;
        let body = json!({ "study": self.study, "reports": self.reports, "summary": self.summary });
        let p = dir.join(format!("{}_summary.json", self.study));
        fs::write(&p, to_json_pretty(&body).expect("summary serializes")).map_err(|e| io(&p, e))?;
        let p = dir.join(format!("{}_series.json", self.study));
        fs::write(&p, to_json_pretty(&self.series).expect("series serialize")).map_err(|e| io(&p, e))?;
        Ok(())
    }
}

/// The five training conditions of the main comparison.
pub fn rq1_modes() -> Vec<FeedbackMode> {
    ["none", "H", "F", "H+F", "H+F-pool"].iter().map(|m| mode(m)).collect()
}

/// Every condition evaluated with the same pooled online teacher.
pub fn rq1(lab: &mut Lab, kind: EnvKind) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new("rq1");
    let env = lab.cfg.env(kind).clone();
    let provider = lab.cfg.online_provider();
    for m in rq1_modes() {
        let t = lab.pretrained(kind, m)?;
        let label = condition_label(m);
        let rows = lab.evaluate(&label, &t, &env, &provider)?;
        out.push(&label, rows);
    }
    let gap = |a: &str, b: &str| paired_reward_gap(&out.rows(a), &out.rows(b));
    out.summary = json!({
        "env": kind.name(),
        "mean_reward": out.reports.iter().map(|r| (r.condition.clone(), r.mean_reward)).collect::<HashMap<_, _>>(),
        "gap_pool_vs_template_HF": gap("pool-H+F", "template-H+F")?,
        "gap_template_HF_vs_none": gap("template-H+F", "no-language")?,
        "gap_template_H_vs_none": gap("template-H", "no-language")?,
        "gap_template_F_vs_none": gap("template-F", "no-language")?,
    });
    out.series.push(Series {
        name: format!("{}_mean_reward", kind.name()),
        x: (0..out.reports.len()).map(|i| i as f64).collect(),
        y: out.reports.iter().map(|r| r.mean_reward).collect(),
    });
    Ok(out)
}

/// Each model evaluated with its own training-time feedback next to the
/// pooled online teacher.
pub fn aligned(lab: &mut Lab, kind: EnvKind) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new("aligned");
    let env = lab.cfg.env(kind).clone();
    let online = lab.cfg.online_provider();
    let mut table = Vec::new();
    for m in rq1_modes() {
        let t = lab.pretrained(kind, m)?;
        let label = condition_label(m);
        let on = out.push(&format!("{label}/online"), lab.evaluate(&format!("{label}/online"), &t, &env, &online)?);
        let own = OnlineProviderConfig::new(m, lab.cfg.provider_seed);
        let al = out.push(&format!("{label}/aligned"), lab.evaluate(&format!("{label}/aligned"), &t, &env, &own)?);
        table.push(json!({ "condition": label, "online": on.mean_reward, "aligned": al.mean_reward }));
    }
    out.summary = json!({ "env": kind.name(), "table": table });
    Ok(out)
}

/// The four pretraining conditions of the adaptation study.
pub fn rq2_modes() -> Vec<FeedbackMode> {
    ["none", "H-pool", "F-pool", "H+F-pool"].iter().map(|m| mode(m)).collect()
}

/// Courier: pretrain on the usual order, fine-tune on the reversed order
/// with a few pooled-feedback episodes, evaluate on the reversed order.
pub fn rq2(lab: &mut Lab) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new("rq2");
    let target = lab.cfg.courier_reversed();
    let max_shots = lab.cfg.shots.iter().copied().max().unwrap_or(0);
    let n = lab.cfg.adapt_episodes.max(max_shots);
    let adapt_data = lab.dataset(&target, mode("H+F-pool"), n, derive_seed(lab.cfg.data_seed, 0xADA))?;
    let provider = lab.cfg.online_provider();
    let mut curves = HashMap::new();
    for m in rq2_modes() {
        let pre = lab.pretrained(EnvKind::Courier, m)?;
        let enc = encode_episodes(&adapt_data.episodes, &pre.spec, &lab.embedder, false);
        let label = condition_label(m);
        let mut ys = Vec::new();
        for &shots in &lab.cfg.shots {
            let (model, log) = adapt(&pre.model, &enc, shots, &lab.cfg.adapt)?;
            let t = Trained {
                model: Arc::new(model),
                spec: pre.spec.clone(),
                mode: m,
                final_loss: log.tail_mean(10),
                dataset_sha256: adapt_data.manifest.episodes_sha256.clone(),
            };
            if shots > 0 {
                lab.store(EnvKind::Courier, &t, Some(shots))?;
            }
            let name = format!("{label}@{shots}");
            let r = out.push(&name, lab.evaluate(&name, &t, &target, &provider)?);
            ys.push(r.mean_success);
        }
        out.series.push(Series { name: label.clone(), x: lab.cfg.shots.iter().map(|&s| s as f64).collect(), y: ys.clone() });
        curves.insert(label, ys);
    }
    out.summary = json!({ "shots": lab.cfg.shots, "success": curves });
    Ok(out)
}

/// Pooled-feedback model under teachers that speak with each probability.
pub fn frequency(lab: &mut Lab, kind: EnvKind) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new(&format!("frequency_{}", kind.name()));
    let env = lab.cfg.env(kind).clone();
    let t = lab.pretrained(kind, mode("H+F-pool"))?;
    let probs = lab.cfg.probabilities.clone();
    let mut ys = Vec::new();
    for &p in &probs {
        let provider = OnlineProviderConfig { speak_probability: p, ..lab.cfg.online_provider() };
        provider.validate()?;
        let label = format!("p={p}");
        ys.push(out.push(&label, lab.evaluate(&label, &t, &env, &provider)?).mean_reward);
    }
    let rho = spearman(&probs, &ys);
    out.summary = json!({ "env": kind.name(), "probabilities": probs, "mean_reward": ys, "spearman": rho });
    out.series.push(Series { name: "mean_reward".into(), x: probs, y: ys });
    Ok(out)
}

/// Pooled-feedback model with a normal, silent and disturbed teacher,
/// against the no-language model.
pub fn corruption(lab: &mut Lab, kind: EnvKind) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new(&format!("corruption_{}", kind.name()));
    let env = lab.cfg.env(kind).clone();
    let lang = lab.pretrained(kind, mode("H+F-pool"))?;
    let none = lab.pretrained(kind, FeedbackMode::NONE)?;
    let normal = lab.cfg.online_provider();
    let empty = OnlineProviderConfig { speak_probability: 0.0, ..normal };
    let disturbed = OnlineProviderConfig { corruption: Corruption::Disturbed, ..normal };
    let b = out.push("no-language", lab.evaluate("no-language", &none, &env, &empty)?);
    let n = out.push("pool-H+F/normal", lab.evaluate("pool-H+F/normal", &lang, &env, &normal)?);
    let e = out.push("pool-H+F/empty", lab.evaluate("pool-H+F/empty", &lang, &env, &empty)?);
    let d = out.push("pool-H+F/disturbed", lab.evaluate("pool-H+F/disturbed", &lang, &env, &disturbed)?);
    out.summary = json!({
        "env": kind.name(),
        "no_language": b.mean_reward,
        "normal": n.mean_reward,
        "empty": e.mean_reward,
        "disturbed": d.mean_reward,
    });
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeKind {
    /// A move opposite to the expert's.
    Navigation,
    /// A pick or drop the expert did not want.
    PickDrop,
    /// The wrong way of opening a bin.
    Mechanism,
}

impl std::str::FromStr for MistakeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "navigation" => Ok(MistakeKind::Navigation),
            "pick_drop" => Ok(MistakeKind::PickDrop),
            "mechanism" => Ok(MistakeKind::Mechanism),
            _ => Err(format!("unknown mistake kind {s:?} (navigation, pick_drop, mechanism)")),
        }
    }
}

/// The injected action for `kind` at the current state, if it applies:
/// it must differ from the expert's choice and actually take effect.
pub fn mistake_action(env: &Env, expert_action: Action, kind: MistakeKind) -> Option<Action> {
    let Env::GridHome(g) = env else { return None };
    let candidates: Vec<Action> = match kind {
        MistakeKind::Navigation => expert_action.opposite().filter(|_| expert_action.is_move()).into_iter().collect(),
        MistakeKind::PickDrop => vec![Action::Pick, Action::Drop],
        MistakeKind::Mechanism => vec![Action::Pedal, Action::Lift, Action::Grasp],
    };
    candidates.into_iter().filter(|&a| a != expert_action).find(|&a| {
        let mut probe = g.clone();
        let before = probe.world().agent_pos();
        if probe.step(a).is_err() {
            return false;
        }
        let ev = probe.world().last_event;
        match kind {
            MistakeKind::Navigation => probe.world().agent_pos() != before,
            MistakeKind::PickDrop => matches!(ev, Event::Picked(_) | Event::Dropped { .. }),
            MistakeKind::Mechanism => matches!(ev, Event::WrongMechanism(_)),
        }
    })
}

/// A state reached by the expert right after an injected mistake, with
/// the teacher that watched it happen.
#[derive(Clone)]
pub struct MistakeState {
    pub seed: u64,
    pub env: Env,
    pub history: History,
    pub provider: OnlineProvider,
    pub injected: Action,
    pub expert_action: Action,
}

const MAX_MISTAKE_TRIES: u64 = 64;

/// Drives the expert to a random point of its own solution where `kind`
/// applies and injects the mistake there. Resamples the layout when no
/// step of the expert path admits the mistake.
pub fn inject_mistake(
    env_cfg: &EnvConfig,
    provider_cfg: &OnlineProviderConfig,
    pool: &Arc<Pool>,
    seed: u64,
    kind: MistakeKind,
) -> Result<MistakeState, EvalError> {
    let expert = Expert::default();
    for attempt in 0..MAX_MISTAKE_TRIES {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let (mut env, _, _) = Env::reset(env_cfg, EnvSeed(s))?;
        if expert_steps_to_success(&env, &expert).is_none() {
            continue;
        }
        // Steps along the expert's path where the mistake applies, leaving
        // at least one step before the goal.
        let mut candidates = Vec::new();
        let mut t = 0;
        while !env.is_terminated() {
            let a = expert.action(&env)?;
            if t >= 1 && mistake_action(&env, a, kind).is_some() {
                candidates.push(t);
            }
            let r = env.step(a)?;
            if r.terminated {
                candidates.retain(|&c| c < t);
            }
            t += 1;
        }
        if candidates.is_empty() {
            continue;
        }
        let at = candidates[rng_for(s, Stream::Perturb).gen_range(0..candidates.len())];
        let (mut env, obs, task) = Env::reset(env_cfg, EnvSeed(s))?;
        let cfg = OnlineProviderConfig { rng_seed: derive_seed(provider_cfg.rng_seed, s), ..*provider_cfg };
        let mut provider = OnlineProvider::new(cfg, Arc::clone(pool), expert.clone())?;
        let mut history = History::new(task, obs);
        let mut last = None;
        for step in 0..=at {
            let fb = provider.step(&env, last)?;
            history.set_feedback(fb.bundle.combined);
            let expert_action = fb.advice.expert_action;
            let a = if step == at {
                mistake_action(&env, expert_action, kind).expect("checked on the same deterministic path")
            } else {
                expert_action
            };
            let r = env.step(a)?;
            history.commit(a, &r);
            last = Some(a);
            if step == at {
                return Ok(MistakeState { seed: s, env, history, provider, injected: a, expert_action });
            }
        }
    }
    Err(EvalError::Config(format!("no state admitting a {kind:?} mistake near seed {seed}")))
}

/// Fraction of the next `window` steps on which `policy` picks the
/// expert's action, starting from the post-mistake state.
pub fn post_mistake_agreement(policy: &mut dyn Policy, state: &MistakeState, window: usize) -> Result<f64, EvalError> {
    let mut env = state.env.clone();
    let mut history = state.history.clone();
    let mut provider = state.provider.clone();
    let mut last = Some(state.injected);
    let (mut agree, mut scored) = (0usize, 0usize);
    for _ in 0..window {
        if env.is_terminated() {
            break;
        }
        let expert_action = match provider.step(&env, last) {
            Ok(fb) => {
                history.set_feedback(fb.bundle.combined);
                Some(fb.advice.expert_action)
            }
            Err(FeedbackError::Policy(_)) => {
                provider.reset();
                None
            }
            Err(e) => return Err(e.into()),
        };
        let a = policy.act(&env, &history)?;
        if let Some(e) = expert_action {
            scored += 1;
            agree += (a == e) as usize;
        }
        let r = env.step(a)?;
        history.commit(a, &r);
        last = Some(a);
    }
    Ok(if scored == 0 { 0.0 } else { agree as f64 / scored as f64 })
}

/// Reference agreement values (percent) reported for navigation mistakes,
/// shown next to the desk numbers for context.
pub const NAVIGATION_REFERENCE: [(&str, f64); 2] = [("no-language", 37.6), ("template-H", 46.2)];

/// Hindsight-trained versus no-language agreement with the expert after an
/// injected mistake, on identical post-mistake states.
pub fn mistakes(lab: &mut Lab, kind: MistakeKind) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new(&format!("mistakes_{}", serde_json::to_value(kind).expect("kind").as_str().expect("string")));
    let env = lab.cfg.gridhome.clone();
    let models = [lab.pretrained(EnvKind::GridHome, FeedbackMode::NONE)?, lab.pretrained(EnvKind::GridHome, mode("H"))?];
    let provider = OnlineProviderConfig::new(mode("H"), lab.cfg.provider_seed);
    let runs = lab.cfg.mistake_runs;
    let blocks = lab.cfg.eval.runs.max(1);
    let master = derive_seed(lab.cfg.eval.master_seed, 0x3157);
    let states: Vec<MistakeState> =
        (0..runs).map(|i| inject_mistake(&env, &provider, &lab.pool, derive_seed(master, i as u64), kind)).collect::<Result<_, _>>()?;
    let mut table = Vec::new();
    let mut per_model = Vec::new();
    for t in &models {
        let label = condition_label(t.mode);
        let mut agent = lab.agent(t);
        let scores: Vec<f64> = states
            .iter()
            .map(|s| post_mistake_agreement(&mut agent, s, lab.cfg.mistake_window))
            .collect::<Result<_, _>>()?;
        let block_means: Vec<f64> = scores.chunks(runs.div_ceil(blocks).max(1)).map(mean).collect();
        let m = mean(&scores);
        table.push(json!({
            "condition": label,
            "agreement_pct": 100.0 * m,
            "std_pct": 100.0 * std_dev(&block_means),
            "reference_pct": NAVIGATION_REFERENCE.iter().find(|(c, _)| *c == label).map(|(_, v)| *v),
        }));
        out.series.push(Series { name: label.clone(), x: (0..scores.len()).map(|i| i as f64).collect(), y: scores.clone() });
        per_model.push(scores);
    }
    let diff = mean(&per_model[1].iter().zip(&per_model[0]).map(|(a, b)| a - b).collect::<Vec<_>>());
    out.summary = json!({
        "mistake": kind,
        "runs": runs,
        "window": lab.cfg.mistake_window,
        "injections_match_construction": states.iter().all(|s| kind != MistakeKind::Navigation || s.expert_action.opposite() == Some(s.injected)),
        "table": table,
        "paired_gain_hindsight_minus_none": diff,
    });
    Ok(out)
}

/// Gain of the pooled-feedback model over the no-language model per
/// GridHome task kind, ordered by how hard the kind is without language.
pub fn difficulty(lab: &mut Lab) -> Result<StudyOutput, EvalError> {
    let mut out = StudyOutput::new("difficulty");
    let base = lab.cfg.gridhome.clone();
    let EnvConfig::GridHome(gh) = &base else {
        return Err(EvalError::Config("difficulty study needs a GridHome environment".into()));
    };
    let none = lab.pretrained(EnvKind::GridHome, FeedbackMode::NONE)?;
    let lang = lab.pretrained(EnvKind::GridHome, mode("H+F-pool"))?;
    let provider = lab.cfg.online_provider();
    let silent = OnlineProviderConfig { speak_probability: 0.0, ..provider };
    let mut rates = Vec::new();
    let mut gains = HashMap::new();
    for kind in gh.task_kinds.clone() {
        let id = serde_json::to_value(kind).expect("kind").as_str().expect("string").to_string();
        let env = EnvConfig::GridHome(crate::env::gridhome::GridHomeConfig { task_kinds: vec![kind], ..gh.clone() });
        let a = lab.evaluate(&format!("{id}/no-language"), &none, &env, &silent)?;
        let b = lab.evaluate(&format!("{id}/pool-H+F"), &lang, &env, &provider)?;
        let ra = out.push(&format!("{id}/no-language"), a.clone());
        out.push(&format!("{id}/pool-H+F"), b.clone());
        rates.push((id.clone(), ra.mean_success));
        gains.insert(id, efficiency_gain(&b, &a)?);
    }
    let order = difficulty_rank(&rates);
    // Difficulty level 1 is the easiest kind.
    let n = order.len();
    let x: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    let y: Vec<f64> = order.iter().map(|id| gains[id]).collect();
    let fit = if n >= 3 { Some(polyfit2(&x, &y)?) } else { None };
    out.summary = json!({
        "hardest_first": order,
        "success_without_language": rates.iter().cloned().collect::<HashMap<_, _>>(),
        "efficiency_gain": gains,
        "quadratic_fit": fit,
    });
    out.series.push(Series { name: "efficiency_gain_by_difficulty".into(), x, y });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_labels() {
        let labels: Vec<String> = rq1_modes().into_iter().map(condition_label).collect();
        assert_eq!(labels, ["no-language", "template-H", "template-F", "template-H+F", "pool-H+F"]);
        assert_eq!(rq2_modes().into_iter().map(condition_label).collect::<Vec<_>>(), ["no-language", "pool-H", "pool-F", "pool-H+F"]);
    }

    #[test]
    fn navigation_mistake_reverses_the_expert() {
        let env = EnvConfig::default_for(EnvKind::GridHome);
        let pool = Arc::new(Pool::builtin());
        let pc = OnlineProviderConfig::new(mode("H"), 1);
        for seed in 0..30 {
            let s = inject_mistake(&env, &pc, &pool, seed, MistakeKind::Navigation).unwrap();
            assert_eq!(s.expert_action.opposite(), Some(s.injected));
            assert!(!s.env.is_terminated());
            assert_eq!(s.history.last_action(), Some(s.injected));
        }
    }

    #[test]
    fn other_mistakes_take_effect() {
        let env = EnvConfig::default_for(EnvKind::GridHome);
        let pool = Arc::new(Pool::builtin());
        let pc = OnlineProviderConfig::new(mode("H"), 1);
        for kind in [MistakeKind::PickDrop, MistakeKind::Mechanism] {
            for seed in 0..10 {
                let s = inject_mistake(&env, &pc, &pool, seed, kind).unwrap();
                assert_ne!(s.injected, s.expert_action);
                let Env::GridHome(g) = &s.env else { unreachable!() };
                let ok = match kind {
                    MistakeKind::PickDrop => matches!(g.world().last_event, Event::Picked(_) | Event::Dropped { .. }),
                    _ => matches!(g.world().last_event, Event::WrongMechanism(_)),
                };
                assert!(ok, "{kind:?} seed {seed}: {:?}", g.world().last_event);
            }
        }
    }

    #[test]
    fn expert_agrees_with_itself_after_a_mistake() {
        let env = EnvConfig::default_for(EnvKind::GridHome);
        let pool = Arc::new(Pool::builtin());
        let pc = OnlineProviderConfig::new(mode("H"), 1);
        let s = inject_mistake(&env, &pc, &pool, 3, MistakeKind::Navigation).unwrap();
        assert_eq!(post_mistake_agreement(&mut Expert::default(), &s, 5).unwrap(), 1.0);
        // The teacher comments on the mistake at the next step.
        let mut p = s.provider.clone();
        let fb = p.step(&s.env, Some(s.injected)).unwrap();
        assert!(!fb.bundle.hindsight.is_empty());
    }

    #[test]
    fn outputs_are_written() {
        let mut out = StudyOutput::new("t");
        let row = EpisodeResult {
            condition: "a".into(),
            run: 0,
            seed: 1,
            reward_total: 1.0,
            success: true,
            steps: 3,
            expert_steps: 3,
            path_weighted: 1.0,
        };
        out.push("a", vec![row]);
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("t_episodes.csv")).unwrap();
        assert_eq!(csv, format!("{}\na,0,1,1.0,1,3,3,1.0\n", EpisodeResult::CSV_HEADER));
        assert!(dir.path().join("t_summary.json").exists() && dir.path().join("t_series.json").exists());
    }
}
