//! Hindsight and foresight language generated by comparing the agent with
//! the expert, plus the phrasing pools and the scripted online teacher.

pub mod augment;
pub mod paraphrase;
pub mod pool;
pub mod provider;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::env::courier::CourierWorld;
use crate::env::gridhome::{Event, GridHome};
use crate::env::{chebyshev, Action, Env};
use crate::expert::{courier_context, courier_expert, gridhome_plan, Expert, GridGoal, PolicyError};

pub use pool::{Pool, TemplateFamily};
pub use provider::{Corruption, OnlineProvider, OnlineProviderConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("feedback data: {0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown template family `{0}`")]
    UnknownFamily(String),
    #[error("augmentation rejected {rejected} variants; {reason}")]
    Lint { rejected: usize, reason: String },
    #[error("augmentation service: {0}")]
    Service(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Informativeness {
    None,
    Hindsight,
    Foresight,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Diversity {
    Template,
    Pool,
}

/// What the teacher says (informativeness) and how varied its phrasing is
/// (diversity). Written as `none`, `H`, `F`, `H+F`, with a `-pool` suffix
/// for pooled phrasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeedbackMode {
    pub informativeness: Informativeness,
    pub diversity: Diversity,
}

impl FeedbackMode {
    pub const NONE: FeedbackMode = FeedbackMode { informativeness: Informativeness::None, diversity: Diversity::Template };

    pub const fn new(informativeness: Informativeness, diversity: Diversity) -> Self {
        FeedbackMode { informativeness, diversity }
    }

    pub fn hindsight(self) -> bool {
        matches!(self.informativeness, Informativeness::Hindsight | Informativeness::Both)
    }

    pub fn foresight(self) -> bool {
        matches!(self.informativeness, Informativeness::Foresight | Informativeness::Both)
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.informativeness {
            Informativeness::None => return f.write_str("none"),
            Informativeness::Hindsight => "H",
            Informativeness::Foresight => "F",
            Informativeness::Both => "H+F",
        };
        match self.diversity {
            Diversity::Template => f.write_str(base),
            Diversity::Pool => write!(f, "{base}-pool"),
        }
    }
}

impl FromStr for FeedbackMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, diversity) = match s.strip_suffix("-pool") {
            Some(h) => (h, Diversity::Pool),
            None => (s, Diversity::Template),
        };
        let informativeness = match head {
            "none" if diversity == Diversity::Template => Informativeness::None,
            "H" => Informativeness::Hindsight,
            "F" => Informativeness::Foresight,
            "H+F" => Informativeness::Both,
            _ => return Err(format!("unknown feedback mode `{s}` (expected none, H, F, H+F, optionally with -pool)")),
        };
        Ok(FeedbackMode { informativeness, diversity })
    }
}

impl Serialize for FeedbackMode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeedbackMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One step's language after mode selection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub hindsight: String,
    pub foresight: String,
    pub combined: String,
}

impl FeedbackBundle {
    /// Keeps the parts the mode asks for and joins them with one space.
    pub fn assemble(mode: FeedbackMode, hindsight: &str, foresight: &str) -> Self {
        let h = if mode.hindsight() { hindsight } else { "" };
        let f = if mode.foresight() { foresight } else { "" };
        let combined = match (h.is_empty(), f.is_empty()) {
            (true, _) => f.to_string(),
            (_, true) => h.to_string(),
            _ => format!("{h} {f}"),
        };
        FeedbackBundle { hindsight: h.to_string(), foresight: f.to_string(), combined }
    }
}

/// A family reference with its slot values; phrasing is chosen at render time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub family_id: &'static str,
    pub slots: Vec<(&'static str, String)>,
}

impl Utterance {
    fn new(family_id: &'static str, slots: Vec<(&'static str, String)>) -> Self {
        Utterance { family_id, slots }
    }

    pub fn slot(&self, name: &str) -> Option<&str> {
        self.slots.iter().find(|(n, _)| *n == name).map(|(_, v)| v.as_str())
    }

    pub fn is_praise(&self) -> bool {
        self.family_id.contains("/hind/praise")
    }

    pub fn render(&self, pool: &Pool, diversity: Diversity, rng: &mut ChaCha8Rng) -> Result<String, FeedbackError> {
        let template = pool.diversify(self.family_id, diversity, rng)?;
        Ok(pool::fill(template, &self.slots))
    }
}

/// How an action is named inside feedback sentences.
pub fn action_phrase(action: Action) -> &'static str {
    match action {
        Action::Left => "move left",
        Action::Right => "move right",
        Action::Up => "move up",
        Action::Down => "move down",
        Action::Pick => "pick something up",
        Action::Drop => "put something down",
        Action::Pedal => "pedal",
        Action::Lift => "lift the lid",
        Action::Grasp => "grasp the handle",
        Action::Stay => "stay put",
    }
}

/// The expert's view of the current step, computed before the agent acts.
/// Hindsight at the next step compares the agent's action against it.
#[derive(Clone, Debug, PartialEq)]
pub struct Advice {
    pub expert_action: Action,
    /// What the expert is heading for, as named in feedback.
    pub target: Option<String>,
    /// `None` once the episode has ended.
    pub foresight: Option<Utterance>,
}

/// Computes the expert action and the foresight directive for it.
pub fn advise(env: &Env, expert: &Expert, last_agent_action: Option<Action>) -> Result<Advice, PolicyError> {
    match env {
        Env::GridHome(g) => {
            if g.is_terminated() {
                return Ok(Advice { expert_action: Action::Stay, target: None, foresight: None });
            }
            let plan = gridhome_plan(g)?;
            let target = gridhome_target(g, plan.goal);
            let foresight = gridhome_foresight(g, plan.action, plan.goal, &target, last_agent_action);
            Ok(Advice { expert_action: plan.action, target: Some(target), foresight: Some(foresight) })
        }
        Env::Courier(c) => {
            let world = c.world();
            if c.is_terminated() {
                return Ok(Advice { expert_action: Action::Stay, target: None, foresight: None });
            }
            let action = courier_expert(world, &expert.courier_cost);
            let target = world.current_target().map(|i| world.entities[i].name.clone());
            let foresight = courier_foresight(world, action, target.as_deref());
            Ok(Advice { expert_action: action, target, foresight: Some(foresight) })
        }
    }
}

fn gridhome_target(g: &GridHome, goal: GridGoal) -> String {
    match goal {
        GridGoal::Face(o) | GridGoal::Fetch(o) => g.object_name(o).to_string(),
        GridGoal::Dispose(_) => "free spot".to_string(),
        GridGoal::ToMat(_) => "mat".to_string(),
        GridGoal::Open(b) | GridGoal::Deposit(_, b) => format!("{} bin", g.bin_name(b)),
    }
}

fn gridhome_foresight(
    g: &GridHome,
    action: Action,
    goal: GridGoal,
    target: &str,
    last_agent_action: Option<Action>,
) -> Utterance {
    if action.is_move() {
        if last_agent_action.and_then(Action::opposite) == Some(action) {
            return Utterance::new("gridhome/fore/turn_back", vec![]);
        }
        return Utterance::new(
            "gridhome/fore/go",
            vec![("direction", action.name().to_string()), ("target", target.to_string())],
        );
    }
    let object = |o: u8| ("object", g.object_name(o).to_string());
    let bin = |b: u8| ("bin", g.bin_name(b).to_string());
    match (action, goal) {
        (Action::Pick, GridGoal::Fetch(o)) => Utterance::new("gridhome/fore/pick", vec![object(o)]),
        (Action::Drop, GridGoal::Face(o)) => Utterance::new("gridhome/fore/face", vec![object(o)]),
        (Action::Drop, GridGoal::ToMat(o)) => Utterance::new("gridhome/fore/drop_mat", vec![object(o)]),
        (Action::Drop, GridGoal::Deposit(o, b)) => Utterance::new("gridhome/fore/deposit", vec![object(o), bin(b)]),
        (Action::Drop, GridGoal::Dispose(o)) => Utterance::new("gridhome/fore/dispose", vec![object(o)]),
        (Action::Pedal, GridGoal::Open(b)) => Utterance::new("gridhome/fore/pedal", vec![bin(b)]),
        (Action::Lift, GridGoal::Open(b)) => Utterance::new("gridhome/fore/lift", vec![bin(b)]),
        (Action::Grasp, GridGoal::Open(b)) => Utterance::new("gridhome/fore/grasp", vec![bin(b)]),
        (a, goal) => unreachable!("expert never plans {a:?} for {goal:?}"),
    }
}

/// Enemies within this Chebyshev distance trigger avoidance advice.
const AVOID_RADIUS: usize = 2;
/// Beyond this distance the way is announced as clear.
const CLEAR_RADIUS: usize = 3;

fn courier_foresight(world: &CourierWorld, action: Action, target: Option<&str>) -> Utterance {
    if action == Action::Stay {
        return Utterance::new("courier/fore/wait", vec![]);
    }
    let direction = ("direction", action.name().to_string());
    let (_, enemy) = courier_context(world);
    let near = enemy.map(|i| (i, chebyshev(world.entities[i].pos, world.agent_pos())));
    match near {
        Some((i, d)) if d <= AVOID_RADIUS => {
            Utterance::new("courier/fore/avoid", vec![direction, ("enemy", world.entities[i].name.clone())])
        }
        Some((_, d)) if d <= CLEAR_RADIUS => Utterance::new(
            "courier/fore/approach",
            vec![direction, ("target", target.unwrap_or("goal").to_string())],
        ),
        _ => Utterance::new("courier/fore/all_clear", vec![direction]),
    }
}

/// Hindsight on the action just taken. `env` is the state after the step.
/// Praise exactly when the agent matched the expert.
pub fn hindsight(prev: &Advice, agent_action: Action, env: &Env) -> Utterance {
    match env {
        Env::GridHome(g) => gridhome_hindsight(prev, agent_action, g),
        Env::Courier(c) => courier_hindsight(prev, agent_action, c.world()),
    }
}

fn gridhome_hindsight(prev: &Advice, agent: Action, g: &GridHome) -> Utterance {
    let expert = prev.expert_action;
    if agent == expert {
        return Utterance::new("gridhome/hind/praise", vec![]);
    }
    if agent.is_move() {
        return if expert.is_move() {
            Utterance::new("gridhome/hind/wrong_direction", vec![])
        } else {
            Utterance::new(
                "gridhome/hind/moved_instead",
                vec![("direction", agent.name().to_string()), ("action", action_phrase(expert).to_string())],
            )
        };
    }
    match g.world().last_event {
        Event::Picked(o) => Utterance::new("gridhome/hind/wrong_pick", vec![("object", g.object_name(o).to_string())]),
        Event::Dropped { object, .. } | Event::Deposited { object, .. } => {
            Utterance::new("gridhome/hind/wrong_drop", vec![("object", g.object_name(object).to_string())])
        }
        Event::WrongMechanism(b) => {
            Utterance::new("gridhome/hind/wrong_mechanism", vec![("bin", g.bin_name(b).to_string())])
        }
        _ => Utterance::new("gridhome/hind/useless", vec![("action", action_phrase(agent).to_string())]),
    }
}

fn courier_hindsight(prev: &Advice, agent: Action, world: &CourierWorld) -> Utterance {
    let expert = prev.expert_action;
    if agent == expert {
        return match (expert.is_move(), &prev.target) {
            (true, Some(t)) => Utterance::new(
                "courier/hind/praise_approach",
                vec![("target", t.clone()), ("direction", expert.name().to_string())],
            ),
            _ => Utterance::new("courier/hind/praise_steady", vec![("action", action_phrase(expert).to_string())]),
        };
    }
    let (_, enemy) = courier_context(world);
    match enemy {
        Some(i) if chebyshev(world.entities[i].pos, world.agent_pos()) <= 1 => {
            Utterance::new("courier/hind/too_close", vec![("enemy", world.entities[i].name.clone())])
        }
        _ => Utterance::new("courier/hind/wrong_move", vec![("action", action_phrase(agent).to_string())]),
    }
}

/// A directive naming `action`, with the target taken from `advice`. Used
/// to inject misleading foresight; the slot always names `action`.
pub fn directive_for(env: &Env, action: Action, advice: &Advice) -> Utterance {
    let target = advice.target.clone().unwrap_or_else(|| "goal".to_string());
    match env {
        Env::Courier(_) => match action {
            Action::Stay => Utterance::new("courier/fore/wait", vec![]),
            a => Utterance::new("courier/fore/approach", vec![("direction", a.name().to_string()), ("target", target)]),
        },
        Env::GridHome(g) => {
            let world = g.world();
            let task = g.task();
            let object = world.inventory.or(task.object).map_or("object", |o| g.object_name(o)).to_string();
            let bin = task.bin.map_or_else(
                || g.bin_name(0).to_string(),
                |b| g.bin_name(b).to_string(),
            );
            match action {
                a if a.is_move() => {
                    Utterance::new("gridhome/fore/go", vec![("direction", a.name().to_string()), ("target", target)])
                }
                Action::Pick => Utterance::new("gridhome/fore/pick", vec![("object", object)]),
                Action::Drop => Utterance::new("gridhome/fore/dispose", vec![("object", object)]),
                Action::Pedal => Utterance::new("gridhome/fore/pedal", vec![("bin", bin)]),
                Action::Lift => Utterance::new("gridhome/fore/lift", vec![("bin", bin)]),
                _ => Utterance::new("gridhome/fore/grasp", vec![("bin", bin)]),
            }
        }
    }
}

/// The action a directive tells the agent to take, if it names one.
pub fn directed_action(u: &Utterance) -> Option<Action> {
    let fam = u.family_id.rsplit('/').next()?;
    match fam {
        "go" | "approach" | "avoid" | "all_clear" => u.slot("direction")?.parse().ok(),
        "wait" => Some(Action::Stay),
        "pick" => Some(Action::Pick),
        "face" | "drop_mat" | "deposit" | "dispose" => Some(Action::Drop),
        "pedal" => Some(Action::Pedal),
        "lift" => Some(Action::Lift),
        "grasp" => Some(Action::Grasp),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{action_set, EnvConfig, EnvKind, EnvSeed};
    use crate::util::{rng_for, Stream};

    #[test]
    fn mode_strings_round_trip() {
        for s in ["none", "H", "F", "H+F", "H-pool", "F-pool", "H+F-pool"] {
            let m: FeedbackMode = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<FeedbackMode>(&json).unwrap(), m);
        }
        assert!("none-pool".parse::<FeedbackMode>().is_err());
        assert!("HF".parse::<FeedbackMode>().is_err());
    }

    #[test]
    fn bundle_assembly_follows_mode() {
        let h = "You are doing well so far.";
        let f = "Turn back.";
        let b = FeedbackBundle::assemble("H+F".parse().unwrap(), h, f);
        assert_eq!(b.combined, "You are doing well so far. Turn back.");
        assert_eq!(FeedbackBundle::assemble("H".parse().unwrap(), h, f).combined, h);
        assert_eq!(FeedbackBundle::assemble("F-pool".parse().unwrap(), h, f).combined, f);
        assert_eq!(FeedbackBundle::assemble(FeedbackMode::NONE, h, f).combined, "");
        // Step 0 has no hindsight: the combined string is just the foresight.
        assert_eq!(FeedbackBundle::assemble("H+F".parse().unwrap(), "", f).combined, f);
    }

    fn env(kind: EnvKind, seed: u64) -> Env {
        Env::reset(&EnvConfig::default_for(kind), EnvSeed(seed)).unwrap().0
    }

    /// Praise iff the agent matched the expert, for every action pair the
    /// expert and agent could produce across a range of states.
    #[test]
    fn hindsight_praises_exactly_on_match() {
        let expert = Expert::default();
        for kind in [EnvKind::GridHome, EnvKind::Courier] {
            for seed in 0..30 {
                let mut e = env(kind, seed);
                let mut steps = 0;
                while !e.is_terminated() && steps < 12 {
                    let advice = advise(&e, &expert, None).unwrap();
                    for &agent in action_set(kind) {
                        let mut after = e.clone();
                        after.step(agent).unwrap();
                        let u = hindsight(&advice, agent, &after);
                        assert_eq!(u.is_praise(), agent == advice.expert_action, "{kind:?} {seed} {agent:?}");
                    }
                    e.step(advice.expert_action).unwrap();
                    steps += 1;
                }
            }
        }
    }

    #[test]
    fn foresight_names_the_expert_action() {
        let expert = Expert::default();
        for kind in [EnvKind::GridHome, EnvKind::Courier] {
            for seed in 0..30 {
                let mut e = env(kind, seed);
                let mut last = None;
                while !e.is_terminated() {
                    let advice = advise(&e, &expert, last).unwrap();
                    let f = advice.foresight.as_ref().unwrap();
                    if f.family_id != "gridhome/fore/turn_back" {
                        assert_eq!(directed_action(f), Some(advice.expert_action), "{f:?}");
                    }
                    e.step(advice.expert_action).unwrap();
                    last = Some(advice.expert_action);
                }
                assert!(advise(&e, &expert, last).unwrap().foresight.is_none());
            }
        }
    }

    #[test]
    fn reversal_yields_turn_back() {
        let expert = Expert::default();
        for seed in 0..40 {
            let e = env(EnvKind::GridHome, seed);
            let advice = advise(&e, &expert, None).unwrap();
            let a = advice.expert_action;
            let Some(back) = a.opposite() else { continue };
            let again = advise(&e, &expert, Some(back)).unwrap();
            assert_eq!(again.foresight.unwrap().family_id, "gridhome/fore/turn_back");
            let pool = Pool::builtin();
            let u = Utterance::new("gridhome/fore/turn_back", vec![]);
            let mut rng = rng_for(0, Stream::Feedback);
            assert_eq!(u.render(&pool, Diversity::Template, &mut rng).unwrap(), "Turn back.");
            return;
        }
        panic!("no seed starts with a move");
    }

    #[test]
    fn pedal_directive_wording() {
        use crate::env::gridhome::{GridHomeConfig, GridTask};
        use crate::env::TaskKind;
        let cfg = GridHomeConfig::default();
        let pool = Pool::builtin();
        let mut rng = rng_for(0, Stream::Feedback);
        let expert = Expert::default();
        for seed in 0..200 {
            let task = GridTask { kind: TaskKind::Open, object: None, bin: Some(0) };
            let g = crate::env::GridHome::reset_with_task(&cfg, EnvSeed(seed), task).unwrap();
            if g.world().bins[0].mechanism != Action::Pedal {
                continue;
            }
            let mut e = Env::GridHome(g);
            loop {
                let advice = advise(&e, &expert, None).unwrap();
                if advice.expert_action == Action::Pedal {
                    let text = advice.foresight.unwrap().render(&pool, Diversity::Template, &mut rng).unwrap();
                    assert_eq!(text, "Pedal to open the recycling bin.");
                    return;
                }
                e.step(advice.expert_action).unwrap();
            }
        }
        panic!("no pedal bin found");
    }

    #[test]
    fn wrong_direction_text() {
        let pool = Pool::builtin();
        let mut rng = rng_for(0, Stream::Feedback);
        let u = Utterance::new("gridhome/hind/wrong_direction", vec![]);
        assert_eq!(u.render(&pool, Diversity::Template, &mut rng).unwrap(), "You have gone to the wrong direction.");
    }

    #[test]
    fn directives_name_their_action() {
        let e = env(EnvKind::GridHome, 3);
        let advice = advise(&e, &Expert::default(), None).unwrap();
        for &a in action_set(EnvKind::GridHome) {
            assert_eq!(directed_action(&directive_for(&e, a, &advice)), Some(a));
        }
        let e = env(EnvKind::Courier, 3);
        let advice = advise(&e, &Expert::default(), None).unwrap();
        for &a in action_set(EnvKind::Courier) {
            assert_eq!(directed_action(&directive_for(&e, a, &advice)), Some(a));
        }
    }
}
