//! `teachable` command line: pool augmentation, data generation, training,
//! adaptation, evaluation and the study pipelines.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use teachable::config::RunConfig;
use teachable::data::{build_dataset, Dataset};
use teachable::env::EnvKind;
use teachable::eval::studies::{self, condition_label, Lab, MistakeKind, StudyOutput};
use teachable::eval::{evaluate, RunReport};
use teachable::expert::Policy;
use teachable::feedback::augment::{augment_pool, Augmenter, HttpAugmenter, RuleAugmenter};
use teachable::feedback::{Corruption, FeedbackMode, OnlineProviderConfig, Pool, TemplateFamily};
use teachable::model::{adapt, encode_episodes, train, Agent, Checkpoint, CheckpointMeta, FeatureSpec, Model};
use teachable::util::to_json_pretty;

#[derive(Parser)]
#[command(name = "teachable", version, about = "Language-feedback decision transformer benchmark")]
struct Cli {
    /// JSON run config; missing keys take preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hyperparameter preset: desk or homegrid-full.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Worker threads; 1 is the bit-reproducible reference.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print progress logs (RUST_LOG also works).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Gridhome,
    Courier,
}

impl From<EnvArg> for EnvKind {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Gridhome => EnvKind::GridHome,
            EnvArg::Courier => EnvKind::Courier,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Rq1,
    Rq2,
    Aligned,
    Frequency,
    Corruption,
    Mistakes,
    Difficulty,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow base templates into a phrasing pool file.
    Augment {
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        /// Variants per family (default from config per environment).
        #[arg(long)]
        variants: Option<usize>,
        /// Completion endpoint; the built-in paraphraser is used otherwise.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect a perturbed-expert dataset with feedback.
    Gendata {
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        /// none, H, F, H+F, H+F-pool (also H-pool, F-pool).
        #[arg(long)]
        mode: Option<FeedbackMode>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on the first episodes of a dataset.
    Adapt {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the online teacher.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long)]
        speak: Option<f64>,
        #[arg(long)]
        mode: Option<FeedbackMode>,
        #[arg(long)]
        disturbed: bool,
        /// Teach with the checkpoint's own training feedback.
        #[arg(long)]
        aligned: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a whole study: datasets, models and evaluations.
    Study {
        #[arg(value_enum)]
        study: StudyArg,
        /// Environment for rq1, aligned, frequency and corruption.
        #[arg(long, value_enum, default_value = "gridhome")]
        env: EnvArg,
        /// Mistake kind for the mistakes study.
        #[arg(long, default_value = "navigation")]
        mistake: MistakeKind,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every trained model as a checkpoint here.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.preset.as_deref(), std::env::vars())?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match cli.cmd {
        Cmd::Augment { env, variants, endpoint, out } => {
            if let Some(e) = endpoint {
                cfg.augment.endpoint = Some(e);
            }
            cmd_augment(&cfg, env.map(Into::into), variants, &out)
        }
        Cmd::Gendata { env, mode, episodes, seed, out } => {
            if let Some(e) = env {
                cfg.env = cfg.study_config().env(e.into()).clone();
            }
            if let Some(m) = mode {
                cfg.data.feedback_mode = m;
            }
            if let Some(n) = episodes {
                cfg.data.episodes = n;
            }
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            if let Some(o) = out {
                cfg.paths.dataset = o;
            }
            cfg.validate()?;
            cmd_gendata(&cfg)
        }
        Cmd::Train { dataset, steps, out } => {
            if let Some(d) = dataset {
                cfg.paths.dataset = d;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(o) = out {
                cfg.paths.checkpoint = o;
            }
            cfg.validate()?;
            cmd_train(&cfg)
        }
        Cmd::Adapt { checkpoint, dataset, shots, out } => {
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            if let Some(s) = shots {
                cfg.adapt.shots = s;
            }
            cmd_adapt(&cfg, &dataset, &out)
        }
        Cmd::Eval { checkpoint, env, speak, mode, disturbed, aligned, out } => {
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            if let Some(e) = env {
                cfg.env = cfg.study_config().env(e.into()).clone();
            }
            if let Some(p) = speak {
                cfg.eval.provider.speak_probability = p;
            }
            if let Some(m) = mode {
                cfg.eval.provider.mode = m;
            }
            if disturbed {
                cfg.eval.provider.corruption = Corruption::Disturbed;
            }
            cfg.eval.aligned |= aligned;
            if let Some(o) = out {
                cfg.paths.results = o;
            }
            cfg.validate()?;
            cmd_eval(&cfg)
        }
        Cmd::Study { study, env, mistake, out, checkpoints } => {
            if let Some(o) = out {
                cfg.paths.results = o;
            }
            cfg.validate()?;
            cmd_study(&cfg, study, env.into(), mistake, checkpoints)
        }
    }
}

fn load_pool(cfg: &RunConfig) -> Result<Arc<Pool>> {
    Ok(Arc::new(match &cfg.paths.pool {
        Some(p) => Pool::load(p).with_context(|| format!("loading paths.pool; run `teachable augment --out {}`", p.display()))?,
        None => Pool::builtin(),
    }))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}; create one with `teachable train --out {}`", path.display(), path.display()))
}

fn cmd_augment(cfg: &RunConfig, env: Option<EnvKind>, variants: Option<usize>, out: &Path) -> Result<()> {
    let base: Vec<TemplateFamily> = match &cfg.paths.templates {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading base templates {}; set paths.templates to an existing file", p.display()))?;
            Pool::parse_jsonl(&text)?
        }
        None => Pool::templates().families().to_vec(),
    };
    let mut augmenter: Box<dyn Augmenter> = match &cfg.augment.endpoint {
        Some(url) => Box::new(HttpAugmenter::new(url.clone())),
        None => Box::new(RuleAugmenter),
    };
    let kinds = match env {
        Some(k) => vec![k],
        None => vec![EnvKind::GridHome, EnvKind::Courier],
    };
    let mut text = String::new();
    for kind in kinds {
        let fams: Vec<TemplateFamily> = base.iter().filter(|f| f.env == kind).cloned().collect();
        if fams.is_empty() {
            continue;
        }
        let n = variants.unwrap_or(match kind {
            EnvKind::GridHome => cfg.augment.variants_gridhome,
            EnvKind::Courier => cfg.augment.variants_courier,
        });
        let (pool, report) = augment_pool(&fams, augmenter.as_mut(), n)?;
        println!("{}: {}", kind.name(), report.summary());
        text.push_str(&pool.to_jsonl(None));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gendata(cfg: &RunConfig) -> Result<()> {
    let pool = load_pool(cfg)?;
    let mut ds = build_dataset(&cfg.data_config(), pool, cfg.workers)?;
    let dir = &cfg.paths.dataset;
    ds.save(dir)?;
    cfg.write_next_to(dir)?;
    println!(
        "{} episodes ({}, {}) success {:.3} -> {}",
        ds.manifest.episode_count,
        ds.env_kind().name(),
        ds.manifest.feedback_mode,
        ds.manifest.success_rate,
        dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&cfg.paths.dataset)?;
    let env = &ds.manifest.config.env;
    let embedder = cfg.embedder()?;
    let spec = FeatureSpec::for_env(env);
    let mode = ds.manifest.feedback_mode;
    let enc = encode_episodes(&ds.episodes, &spec, &embedder, mode == FeedbackMode::NONE);
    let mut model = Model::new(cfg.model.config_for(env, embedder.dim()))?;
    let log = train(&mut model, &enc, &cfg.train)?;
    let meta = CheckpointMeta {
        feedback_mode: mode.to_string(),
        dataset_sha256: ds.manifest.episodes_sha256.clone(),
        train_steps: cfg.train.steps,
        final_loss: log.tail_mean(100),
        adapted_shots: None,
    };
    let out = &cfg.paths.checkpoint;
    Checkpoint::new(&model, spec, embedder.dim(), meta).save(out)?;
    cfg.write_next_to(out.parent().unwrap_or(Path::new(".")))?;
    println!("trained {} steps, final loss {:.4} -> {}", cfg.train.steps, log.tail_mean(100), out.display());
    Ok(())
}

fn cmd_adapt(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint(&cfg.paths.checkpoint)?;
    let ds = load_dataset(dataset)?;
    if ds.env_kind() != ck.features.env_kind() {
        bail!("dataset {} is {}, checkpoint is {}", dataset.display(), ds.env_kind().name(), ck.features.env_kind().name());
    }
    let embedder = cfg.embedder()?;
    if embedder.dim() != ck.embed_dim {
        bail!("embed.dim is {}, checkpoint was trained with {}", embedder.dim(), ck.embed_dim);
    }
    let pre = ck.model()?;
    let enc = encode_episodes(&ds.episodes, &ck.features, &embedder, false);
    let (model, log) = adapt(&pre, &enc, cfg.adapt.shots, &cfg.adapt.optim)?;
    let meta = CheckpointMeta { adapted_shots: Some(cfg.adapt.shots), final_loss: log.tail_mean(10), ..ck.meta.clone() };
    Checkpoint::new(&model, ck.features.clone(), ck.embed_dim, meta).save(out)?;
    cfg.write_next_to(out.parent().unwrap_or(Path::new(".")))?;
    println!("adapted on {} episodes -> {}", cfg.adapt.shots, out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let ck = load_checkpoint(&cfg.paths.checkpoint)?;
    if cfg.env.kind() != ck.features.env_kind() {
        bail!("env is {}, checkpoint is {}; pass --env {}", cfg.env.kind().name(), ck.features.env_kind().name(), ck.features.env_kind().name());
    }
    let embedder = cfg.embedder()?;
    if embedder.dim() != ck.embed_dim {
        bail!("embed.dim is {}, checkpoint was trained with {}", embedder.dim(), ck.embed_dim);
    }
    let pool = load_pool(cfg)?;
    let mut provider: OnlineProviderConfig = cfg.eval.provider;
    if cfg.eval.aligned {
        provider.mode = ck.meta.feedback_mode.parse().map_err(anyhow::Error::msg)?;
    }
    let model = Arc::new(ck.model()?);
    let spec = ck.features.clone();
    let factory = || -> Box<dyn Policy + Send> { Box::new(Agent::new(Arc::clone(&model), spec.clone(), embedder.clone())) };
    let mode: FeedbackMode = ck.meta.feedback_mode.parse().map_err(anyhow::Error::msg)?;
    let label = condition_label(mode);
    let rows = evaluate(&label, &factory, &cfg.env, &provider, &pool, &cfg.eval_config())?;
    let mut out = StudyOutput { study: "eval".into(), reports: vec![], episodes: vec![], series: vec![], summary: serde_json::json!({}) };
    out.reports.push(RunReport::from_results(&label, &rows));
    out.episodes = rows;
    out.summary = serde_json::json!({ "checkpoint": cfg.paths.checkpoint, "provider": provider });
    finish(cfg, &out)
}

fn cmd_study(cfg: &RunConfig, study: StudyArg, env: EnvKind, mistake: MistakeKind, ckpts: Option<PathBuf>) -> Result<()> {
    let pool = load_pool(cfg)?;
    let mut lab = Lab::new(cfg.study_config(), pool).with_embedder(cfg.embedder()?);
    if let Some(dir) = ckpts {
        lab = lab.save_checkpoints(dir);
    }
    let out = match study {
        StudyArg::Rq1 => studies::rq1(&mut lab, env)?,
        StudyArg::Rq2 => studies::rq2(&mut lab)?,
        StudyArg::Aligned => studies::aligned(&mut lab, env)?,
        StudyArg::Frequency => studies::frequency(&mut lab, env)?,
        StudyArg::Corruption => studies::corruption(&mut lab, env)?,
        StudyArg::Mistakes => studies::mistakes(&mut lab, mistake)?,
        StudyArg::Difficulty => studies::difficulty(&mut lab)?,
    };
    finish(cfg, &out)
}

fn finish(cfg: &RunConfig, out: &StudyOutput) -> Result<()> {
    let dir = &cfg.paths.results;
    out.write(dir)?;
    cfg.write_next_to(dir)?;
    for r in &out.reports {
        println!(
            "{:<28} reward {:.3} ± {:.3}  success {:.3}  path-weighted {:.3}",
            r.condition, r.mean_reward, r.std_reward, r.mean_success, r.mean_path_weighted
        );
    }
    println!("{}", to_json_pretty(&out.summary)?);
    println!("results in {}", dir.display());
    Ok(())
}
