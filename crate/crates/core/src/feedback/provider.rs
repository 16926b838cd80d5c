//! Scripted teacher used both to label demonstrations and to talk to agents
//! during evaluation. It decides whether to speak, what to say and how to
//! phrase it, and can deliberately mislead.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{advise, directive_for, hindsight, Advice, FeedbackBundle, FeedbackError, FeedbackMode, Pool, Utterance};
use crate::env::courier::NAME_LEXICON;
use crate::env::gridhome::{BIN_LEXICON, OBJECT_LEXICON};
use crate::env::{Action, Env};
use crate::expert::Expert;
use crate::util::{rng_for, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    #[default]
    Off,
    /// Flip hindsight, point foresight at a non-expert action, swap names
    /// and sometimes add an unrelated sentence.
    Disturbed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineProviderConfig {
    pub speak_probability: f64,
    pub mode: FeedbackMode,
    #[serde(default)]
    pub corruption: Corruption,
    pub rng_seed: u64,
}

impl OnlineProviderConfig {
    pub fn new(mode: FeedbackMode, rng_seed: u64) -> Self {
        OnlineProviderConfig { speak_probability: 1.0, mode, corruption: Corruption::Off, rng_seed }
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        if !(0.0..=1.0).contains(&self.speak_probability) {
            return Err(FeedbackError::Data(format!(
                "speak_probability {} is outside [0, 1]",
                self.speak_probability
            )));
        }
        Ok(())
    }
}

const IRRELEVANT: [&str; 8] = [
    "The weather looks nice today.",
    "Some rooms have more windows than others.",
    "I wonder what is for dinner tonight.",
    "Remember to drink some water.",
    "This place could use a fresh coat of paint.",
    "Time flies when you are busy.",
    "Nobody has watered the plants this week.",
    "The clock on the wall runs a little fast.",
];

/// Everything the teacher produced for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFeedback {
    pub bundle: FeedbackBundle,
    pub advice: Advice,
    pub spoke: bool,
    /// Directive actually rendered, after any corruption.
    pub foresight: Option<Utterance>,
}

#[derive(Clone)]
pub struct OnlineProvider {
    cfg: OnlineProviderConfig,
    pool: Arc<Pool>,
    expert: Expert,
    rng: ChaCha8Rng,
    prev: Option<Advice>,
}

impl OnlineProvider {
    pub fn new(cfg: OnlineProviderConfig, pool: Arc<Pool>, expert: Expert) -> Result<Self, FeedbackError> {
        cfg.validate()?;
        Ok(OnlineProvider { cfg, pool, expert, rng: rng_for(cfg.rng_seed, Stream::Provider), prev: None })
    }

    pub fn config(&self) -> &OnlineProviderConfig {
        &self.cfg
    }

    /// Forgets the previous step; call at the start of every episode.
    pub fn reset(&mut self) {
        self.prev = None;
    }

    /// Feedback for the current state of `env`. `last_action` is the action
    /// the agent took since the previous call (none at step 0).
    pub fn step(&mut self, env: &Env, last_action: Option<Action>) -> Result<StepFeedback, FeedbackError> {
        let advice = advise(env, &self.expert, last_action)?;
        let hind = match (&self.prev, last_action) {
            (Some(prev), Some(a)) => Some(hindsight(prev, a, env)),
            _ => None,
        };
        let prev_expert = self.prev.as_ref().map(|p| p.expert_action);
        self.prev = Some(advice.clone());

        // The speak draw comes first and is always taken so the stream stays
        // aligned whatever the probability.
        let speak: f64 = self.rng.gen();
        if speak >= self.cfg.speak_probability {
            return Ok(StepFeedback { bundle: FeedbackBundle::default(), advice, spoke: false, foresight: None });
        }

        let mode = self.cfg.mode;
        let (mut hind, mut fore) = (hind, advice.foresight.clone());
        if self.cfg.corruption == Corruption::Disturbed {
            hind = hind.map(|h| self.flip_hindsight(env, h, last_action, prev_expert));
            fore = fore.map(|_| self.mislead(env, &advice));
            hind = hind.map(|u| self.swap_names(env, u));
            fore = fore.map(|u| self.swap_names(env, u));
        }
        let diversity = mode.diversity;
        let h = match (&hind, mode.hindsight()) {
            (Some(u), true) => u.render(&self.pool, diversity, &mut self.rng)?,
            _ => String::new(),
        };
        let f = match (&fore, mode.foresight()) {
            (Some(u), true) => u.render(&self.pool, diversity, &mut self.rng)?,
            _ => String::new(),
        };
        let mut bundle = FeedbackBundle::assemble(mode, &h, &f);
        if self.cfg.corruption == Corruption::Disturbed && !bundle.combined.is_empty() && self.rng.gen_bool(0.5) {
            let extra = IRRELEVANT[self.rng.gen_range(0..IRRELEVANT.len())];
            bundle.combined = format!("{} {extra}", bundle.combined);
        }
        Ok(StepFeedback { bundle, advice, spoke: true, foresight: fore })
    }

    /// Praise becomes criticism and criticism becomes praise.
    fn flip_hindsight(&mut self, env: &Env, h: Utterance, agent: Option<Action>, expert: Option<Action>) -> Utterance {
        let courier = matches!(env, Env::Courier(_));
        if h.is_praise() {
            return if courier {
                let wrong = expert.unwrap_or(Action::Stay);
                Utterance::new("courier/hind/wrong_move", vec![("action", super::action_phrase(wrong).to_string())])
            } else {
                Utterance::new("gridhome/hind/wrong_direction", vec![])
            };
        }
        if courier {
            let a = agent.unwrap_or(Action::Stay);
            Utterance::new("courier/hind/praise_steady", vec![("action", super::action_phrase(a).to_string())])
        } else {
            Utterance::new("gridhome/hind/praise", vec![])
        }
    }

    /// A directive for a uniformly drawn action other than the expert's.
    fn mislead(&mut self, env: &Env, advice: &Advice) -> Utterance {
        let others: Vec<Action> = env.action_set().iter().copied().filter(|&a| a != advice.expert_action).collect();
        let a = *others.choose(&mut self.rng).expect("every action set has at least two actions");
        directive_for(env, a, advice)
    }

    fn swap_names(&mut self, env: &Env, mut u: Utterance) -> Utterance {
        let entity_names: Vec<String> = match env {
            Env::Courier(c) => c.world().entities.iter().map(|e| e.name.clone()).collect(),
            Env::GridHome(_) => Vec::new(),
        };
        for (slot, value) in u.slots.iter_mut() {
            let choices: Vec<String> = match (*slot, env) {
                ("object", _) | ("target", Env::GridHome(_)) => OBJECT_LEXICON.iter().map(|s| s.to_string()).collect(),
                ("bin", _) => BIN_LEXICON.iter().map(|s| s.to_string()).collect(),
                ("target" | "enemy", Env::Courier(_)) => {
                    if entity_names.len() > 1 {
                        entity_names.clone()
                    } else {
                        NAME_LEXICON.iter().map(|s| s.to_string()).collect()
                    }
                }
                _ => continue,
            };
            let others: Vec<&String> = choices.iter().filter(|c| *c != value).collect();
            if let Some(pick) = others.choose(&mut self.rng) {
                *value = (*pick).clone();
            }
        }
        u
    }
}
