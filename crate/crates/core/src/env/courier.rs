//! Message-delivery grid: fetch a message from one character, deliver it to
//! another, and keep away from the enemy. Roles are disclosed only by the
//! per-episode manual in the task text.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    chebyshev, manhattan, offset, Action, Cell, Dir, EntityView, EnvError, EnvSeed, EpisodeLimits, Observation,
    Pose, StepResult, TaskDescription, TaskKind,
};
use crate::util::{rng_for, Stream};

pub const NAME_LEXICON: [&str; 12] = [
    "queen", "wizard", "ferry", "dog", "robot", "plane", "knight", "thief", "scholar", "ship", "mage", "airplane",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MessageHolder,
    Goal,
    Enemy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamic {
    Stationary,
    Chasing,
    Fleeing,
}

pub const DYNAMICS: [Dynamic; 3] = [Dynamic::Stationary, Dynamic::Chasing, Dynamic::Fleeing];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourierOrder {
    MessageThenGoal,
    GoalThenMessage,
}

impl CourierOrder {
    pub fn task_kind(self) -> TaskKind {
        match self {
            CourierOrder::MessageThenGoal => TaskKind::MessageThenGoal,
            CourierOrder::GoalThenMessage => TaskKind::GoalThenMessage,
        }
    }

    /// The role that must be visited at a given progress level.
    pub fn target_role(self, progress: u8) -> Role {
        match (self, progress) {
            (CourierOrder::MessageThenGoal, 0) | (CourierOrder::GoalThenMessage, 1) => Role::MessageHolder,
            _ => Role::Goal,
        }
    }

    fn sentence(self) -> &'static str {
        match self {
            CourierOrder::MessageThenGoal => "first retrieve the message and then deliver it to the goal.",
            CourierOrder::GoalThenMessage => "first get to the goal and then retrieve the message.",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CourierConfig {
    pub height: usize,
    pub width: usize,
    pub enemies: usize,
    /// Per-tick probability that a mobile entity moves.
    pub move_prob: f64,
    pub names: Vec<String>,
    pub orders: Vec<CourierOrder>,
    pub limits: EpisodeLimits,
}

impl Default for CourierConfig {
    fn default() -> Self {
        CourierConfig {
            height: 10,
            width: 10,
            enemies: 1,
            move_prob: 0.5,
            names: NAME_LEXICON.iter().map(|s| s.to_string()).collect(),
            orders: vec![CourierOrder::MessageThenGoal],
            limits: EpisodeLimits { max_steps: 64, discount: 1.0 },
        }
    }
}

impl CourierConfig {
    pub fn entity_count(&self) -> usize {
        2 + self.enemies
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.limits.validate()?;
        if self.height < 4 || self.width < 4 {
            return Err(EnvError::config("height", format!("grid {}x{} is smaller than 4x4", self.height, self.width)));
        }
        if !(1..=3).contains(&self.enemies) {
            return Err(EnvError::config("enemies", "must be between 1 and 3"));
        }
        if !(0.0..=1.0).contains(&self.move_prob) {
            return Err(EnvError::config("move_prob", "must lie in [0, 1]"));
        }
        let mut names = self.names.clone();
        names.sort();
        names.dedup();
        if names.len() != self.names.len() || names.iter().any(|n| n.trim().is_empty()) {
            return Err(EnvError::config("names", "names must be unique and nonempty"));
        }
        if self.names.len() < self.entity_count() {
            return Err(EnvError::config("names", "fewer names than entities"));
        }
        // Entities must fit outside the agent's 5x5 neighbourhood.
        if self.height * self.width < 25 + self.entity_count() {
            return Err(EnvError::config("height", "grid too small for entity placement"));
        }
        if self.orders.is_empty() {
            return Err(EnvError::config("orders", "task filter is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub name: String,
    pub role: Role,
    pub dynamic: Dynamic,
    pub pos: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CourierWorld {
    pub height: usize,
    pub width: usize,
    pub entities: Vec<Entity>,
    pub agent: Pose,
    pub order: CourierOrder,
    /// Completed visits in the required order (0, 1 or 2).
    pub progress: u8,
    pub move_prob: f64,
}

impl CourierWorld {
    pub fn agent_pos(&self) -> (usize, usize) {
        (self.agent.row, self.agent.col)
    }

    pub fn entity_at(&self, pos: (usize, usize)) -> Option<usize> {
        self.entities.iter().position(|e| e.pos == pos)
    }

    pub fn role_index(&self, role: Role) -> Option<usize> {
        self.entities.iter().position(|e| e.role == role)
    }

    pub fn enemy_positions(&self) -> Vec<(usize, usize)> {
        self.entities.iter().filter(|e| e.role == Role::Enemy).map(|e| e.pos).collect()
    }

    /// Entity the agent must reach next.
    pub fn current_target(&self) -> Option<usize> {
        (self.progress < 2).then(|| self.role_index(self.order.target_role(self.progress))).flatten()
    }

    pub fn carries_message(&self) -> bool {
        self.order == CourierOrder::MessageThenGoal && self.progress >= 1
    }

    /// Moves every mobile entity once. One uniform draw per entity per tick
    /// keeps the random stream aligned whatever the entities do.
    pub fn tick_entities(&mut self, rng: &mut ChaCha8Rng) {
        let agent = self.agent_pos();
        for i in 0..self.entities.len() {
            let u: f64 = rng.gen();
            let e = &self.entities[i];
            if e.dynamic == Dynamic::Stationary || u >= self.move_prob {
                continue;
            }
            let here = e.pos;
            let key = |p: (usize, usize)| (chebyshev(p, agent), manhattan(p, agent));
            let mut best: Option<((usize, usize), (usize, usize))> = None;
            for d in Dir::ORDER {
                let Some(n) = offset(here, d, self.height, self.width) else { continue };
                if self.entities.iter().enumerate().any(|(j, o)| j != i && o.pos == n) {
                    continue;
                }
                let k = key(n);
                let better = match e.dynamic {
                    Dynamic::Chasing => k < best.map_or(key(here), |b| b.1),
                    Dynamic::Fleeing => {
                        k.0 > chebyshev(here, agent) && best.is_none_or(|b| k > b.1)
                    }
                    Dynamic::Stationary => false,
                };
                if better {
                    best = Some((n, k));
                }
            }
            if let Some((n, _)) = best {
                self.entities[i].pos = n;
            }
        }
    }

    /// Applies contact rules at the agent's cell: `(reward, terminated)`.
    pub fn resolve_contact(&mut self) -> (f64, bool) {
        let Some(i) = self.entity_at(self.agent_pos()) else { return (0.0, false) };
        let role = self.entities[i].role;
        if role == Role::Enemy {
            return (0.0, true);
        }
        if self.progress < 2 && self.order.target_role(self.progress) == role {
            self.progress += 1;
            if self.progress == 2 {
                return (1.0, true);
            }
        }
        (0.0, false)
    }
}

#[derive(Clone, Debug)]
pub struct Courier {
    config: CourierConfig,
    world: CourierWorld,
    rng: ChaCha8Rng,
    description: TaskDescription,
    manual: Vec<String>,
    step_index: usize,
    terminated: bool,
}

impl Courier {
    pub fn reset(config: &CourierConfig, seed: EnvSeed) -> Result<Courier, EnvError> {
        config.validate()?;
        let mut task_rng = rng_for(seed.0, Stream::Task);
        let order = config.orders[task_rng.gen_range(0..config.orders.len())];
        Courier::reset_with_order(config, seed, order)
    }

    pub fn reset_with_order(config: &CourierConfig, seed: EnvSeed, order: CourierOrder) -> Result<Courier, EnvError> {
        config.validate()?;
        let mut rng = rng_for(seed.0, Stream::Layout);
        let (h, w) = (config.height, config.width);
        let agent = (rng.gen_range(0..h), rng.gen_range(0..w));
        let facing = Dir::ORDER[rng.gen_range(0..4)];

        let n = config.entity_count();
        let names: Vec<String> = config.names.choose_multiple(&mut rng, n).cloned().collect();
        let mut roles = vec![Role::MessageHolder, Role::Goal];
        roles.extend(std::iter::repeat_n(Role::Enemy, config.enemies));
        roles.shuffle(&mut rng);
        let mut cells: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&p| chebyshev(p, agent) >= 2)
            .collect();
        cells.shuffle(&mut rng);
        let entities: Vec<Entity> = (0..n)
            .map(|i| Entity {
                name: names[i].clone(),
                role: roles[i],
                dynamic: DYNAMICS[rng.gen_range(0..DYNAMICS.len())],
                pos: cells[i],
            })
            .collect();

        let mut phrasing = rng_for(seed.0, Stream::Task);
        let manual: Vec<String> = entities.iter().map(|e| manual_sentence(e, &mut phrasing)).collect();
        let text = format!("{} {}", order.sentence(), manual.join(" "));
        let description = TaskDescription {
            text,
            kind: order.task_kind(),
            target_ids: (0..n as u8).collect(),
        };
        Ok(Courier {
            config: config.clone(),
            world: CourierWorld {
                height: h,
                width: w,
                entities,
                agent: Pose { row: agent.0, col: agent.1, facing },
                order,
                progress: 0,
                move_prob: config.move_prob,
            },
            rng: rng_for(seed.0, Stream::Dynamics),
            description,
            manual,
            step_index: 0,
            terminated: false,
        })
    }

    pub fn config(&self) -> &CourierConfig {
        &self.config
    }

    pub fn world(&self) -> &CourierWorld {
        &self.world
    }

    pub fn manual(&self) -> &[String] {
        &self.manual
    }

    pub fn task_description(&self) -> &TaskDescription {
        &self.description
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.terminated {
            return Err(EnvError::EpisodeClosed);
        }
        if !super::COURIER_ACTIONS.contains(&action) {
            return Err(EnvError::UnknownAction(action));
        }
        self.world.tick_entities(&mut self.rng);
        if let Some(dir) = action.direction() {
            self.world.agent.facing = dir;
            if let Some(next) = offset(self.world.agent_pos(), dir, self.world.height, self.world.width) {
                self.world.agent.row = next.0;
                self.world.agent.col = next.1;
            }
        }
        self.step_index += 1;
        let before = self.world.progress;
        let (reward, done) = self.world.resolve_contact();
        self.terminated = done || self.step_index >= self.config.limits.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: self.terminated,
            subgoal_just_completed: self.world.progress == 1 && before == 0,
        })
    }

    pub fn observation(&self) -> Observation {
        let w = &self.world;
        let mut cells = vec![Cell::FLOOR; w.height * w.width];
        for (i, e) in w.entities.iter().enumerate() {
            cells[e.pos.0 * w.width + e.pos.1].entity = Some(i as u8);
        }
        let entities = w
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| EntityView { id: i as u8, name: e.name.clone(), row: e.pos.0, col: e.pos.1, open: None })
            .collect();
        Observation {
            height: w.height,
            width: w.width,
            cells,
            entities,
            agent: w.agent,
            inventory: w.carries_message().then_some(0),
            progress: w.progress,
            step_index: self.step_index,
        }
    }
}

fn manual_sentence(e: &Entity, rng: &mut ChaCha8Rng) -> String {
    let adjectives: &[&str] = match e.dynamic {
        Dynamic::Stationary => &["stationary", "immobile", "motionless"],
        Dynamic::Chasing => &["approaching", "chasing", "pursuing"],
        Dynamic::Fleeing => &["fleeing", "retreating", "escaping"],
    };
    let roles: &[&str] = match e.role {
        Role::MessageHolder => &["has the message you need", "is carrying a secret message", "holds the classified report"],
        Role::Goal => &["is the goal", "is waiting for the message", "is the receiver you must reach"],
        Role::Enemy => &["is a deadly enemy", "is dangerous and must be avoided", "will kill you on contact"],
    };
    let adj = adjectives[rng.gen_range(0..adjectives.len())];
    let role = roles[rng.gen_range(0..roles.len())];
    let article = match rng.gen_range(0..2) {
        0 => "the",
        _ if adj.starts_with(['a', 'e', 'i', 'o', 'u']) => "an",
        _ => "a",
    };
    format!("{article} {adj} {} {role}.", e.name)
}
