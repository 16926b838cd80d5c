//! Household grid: pickable objects, a mat, and bins whose opening
//! mechanism is hidden and resampled every episode.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    offset, Action, Cell, Dir, EntityView, EnvError, EnvSeed, EpisodeLimits, Observation, Pose,
    StepResult, TaskDescription, TaskKind, Terrain,
};
use crate::util::{rng_for, Stream};

pub const OBJECT_LEXICON: [&str; 6] = ["bottle", "plates", "fruit", "can", "papers", "cup"];
pub const BIN_LEXICON: [&str; 3] = ["recycling", "trash", "compost"];
pub const MECHANISMS: [Action; 3] = [Action::Pedal, Action::Lift, Action::Grasp];

const MAX_LAYOUT_ATTEMPTS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridHomeConfig {
    pub height: usize,
    pub width: usize,
    /// Interior wall cells in addition to the border.
    pub interior_walls: usize,
    pub objects: Vec<String>,
    pub bins: Vec<String>,
    /// Task kinds the sampler may draw from.
    pub task_kinds: Vec<TaskKind>,
    /// Pins every episode to a single task instead of sampling.
    pub fixed_task: Option<GridTask>,
    pub limits: EpisodeLimits,
}

impl Default for GridHomeConfig {
    fn default() -> Self {
        GridHomeConfig {
            height: 8,
            width: 8,
            interior_walls: 4,
            objects: OBJECT_LEXICON[..3].iter().map(|s| s.to_string()).collect(),
            bins: BIN_LEXICON.iter().map(|s| s.to_string()).collect(),
            task_kinds: vec![TaskKind::Find, TaskKind::Get, TaskKind::Rearrange, TaskKind::Open],
            fixed_task: None,
            limits: EpisodeLimits { max_steps: 100, discount: 1.0 },
        }
    }
}

impl GridHomeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.limits.validate()?;
        if self.height < 4 || self.width < 4 {
            return Err(EnvError::config("height", format!("grid {}x{} is smaller than 4x4", self.height, self.width)));
        }
        if self.objects.is_empty() {
            return Err(EnvError::config("objects", "at least one object is required"));
        }
        if self.objects.len() > 10 {
            return Err(EnvError::config("objects", "at most 10 objects are supported"));
        }
        if self.bins.is_empty() || self.bins.len() > 26 {
            return Err(EnvError::config("bins", "between 1 and 26 bins are required"));
        }
        let interior = (self.height - 2) * (self.width - 2);
        // Walls, bins, objects, the mat and the agent each need their own cell.
        let needed = self.interior_walls + self.bins.len() + self.objects.len() + 2;
        if needed > interior {
            return Err(EnvError::config(
                "objects",
                format!("{needed} occupied cells do not fit in the {interior}-cell interior"),
            ));
        }
        if self.task_kinds.is_empty() && self.fixed_task.is_none() {
            return Err(EnvError::config("task_kinds", "task filter is empty"));
        }
        for kind in &self.task_kinds {
            if !kind.is_gridhome() {
                return Err(EnvError::config("task_kinds", format!("{kind:?} is not a gridhome task")));
            }
        }
        if let Some(task) = &self.fixed_task {
            task.check(self.objects.len(), self.bins.len())?;
        }
        Ok(())
    }

    /// Every `(kind, object, bin)` combination allowed by the task filter.
    pub fn task_universe(&self) -> Vec<GridTask> {
        if let Some(task) = self.fixed_task {
            return vec![task];
        }
        let objects = self.objects.len() as u8;
        let bins = self.bins.len() as u8;
        let mut out = Vec::new();
        for &kind in &self.task_kinds {
            match kind {
                TaskKind::Find | TaskKind::Get | TaskKind::Rearrange => {
                    out.extend((0..objects).map(|o| GridTask { kind, object: Some(o), bin: None }));
                }
                TaskKind::Open => out.extend((0..bins).map(|b| GridTask { kind, object: None, bin: Some(b) })),
                TaskKind::CleanUp => {
                    for o in 0..objects {
                        out.extend((0..bins).map(|b| GridTask { kind, object: Some(o), bin: Some(b) }));
                    }
                }
                _ => {}
            }
        }
        out
    }
}

impl TaskKind {
    pub fn is_gridhome(self) -> bool {
        matches!(self, TaskKind::Find | TaskKind::Get | TaskKind::Rearrange | TaskKind::Open | TaskKind::CleanUp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTask {
    pub kind: TaskKind,
    #[serde(default)]
    pub object: Option<u8>,
    #[serde(default)]
    pub bin: Option<u8>,
}

impl GridTask {
    fn check(&self, objects: usize, bins: usize) -> Result<(), EnvError> {
        let needs_object = matches!(self.kind, TaskKind::Find | TaskKind::Get | TaskKind::Rearrange | TaskKind::CleanUp);
        let needs_bin = matches!(self.kind, TaskKind::Open | TaskKind::CleanUp);
        if !self.kind.is_gridhome() {
            return Err(EnvError::config("fixed_task", "not a gridhome task kind"));
        }
        match self.object {
            Some(o) if (o as usize) >= objects => return Err(EnvError::config("fixed_task", "object id out of range")),
            None if needs_object => return Err(EnvError::config("fixed_task", "task needs an object")),
            _ => {}
        }
        match self.bin {
            Some(b) if (b as usize) >= bins => return Err(EnvError::config("fixed_task", "bin id out of range")),
            None if needs_bin => return Err(EnvError::config("fixed_task", "task needs a bin")),
            _ => {}
        }
        Ok(())
    }

    /// Short stable identifier, e.g. `open:trash`.
    pub fn label(&self, config: &GridHomeConfig) -> String {
        let kind = match self.kind {
            TaskKind::Find => "find",
            TaskKind::Get => "get",
            TaskKind::Rearrange => "rearrange",
            TaskKind::Open => "open",
            TaskKind::CleanUp => "clean_up",
            _ => "other",
        };
        let mut parts = vec![kind.to_string()];
        if let Some(o) = self.object {
            parts.push(config.objects[o as usize].clone());
        }
        if let Some(b) = self.bin {
            parts.push(config.bins[b as usize].clone());
        }
        parts.join(":")
    }
}

/// Uniform draw over the filtered task universe.
pub fn sample_task(config: &GridHomeConfig, seed: EnvSeed) -> Result<GridTask, EnvError> {
    let universe = config.task_universe();
    if universe.is_empty() {
        return Err(EnvError::config("task_kinds", "task filter is empty"));
    }
    let mut rng = rng_for(seed.0, Stream::Task);
    Ok(universe[rng.gen_range(0..universe.len())])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bin {
    pub name: String,
    pub pos: (usize, usize),
    pub mechanism: Action,
    pub open: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectPlace {
    Floor(usize, usize),
    Held,
    Deposited(u8),
}

/// What the last action did, used by task evaluation and feedback context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    None,
    Moved,
    Bumped,
    Picked(u8),
    Dropped { object: u8, pos: (usize, usize) },
    Deposited { object: u8, bin: u8 },
    Opened(u8),
    WrongMechanism(u8),
    Wasted,
}

/// Full world state, including what the agent cannot observe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridWorld {
    pub height: usize,
    pub width: usize,
    pub walls: Vec<bool>,
    pub mat: (usize, usize),
    pub objects: Vec<ObjectPlace>,
    pub bins: Vec<Bin>,
    pub agent: Pose,
    pub inventory: Option<u8>,
    pub last_event: Event,
}

impl GridWorld {
    pub fn is_wall(&self, pos: (usize, usize)) -> bool {
        self.walls[pos.0 * self.width + pos.1]
    }

    pub fn bin_at(&self, pos: (usize, usize)) -> Option<u8> {
        self.bins.iter().position(|b| b.pos == pos).map(|i| i as u8)
    }

    pub fn object_at(&self, pos: (usize, usize)) -> Option<u8> {
        self.objects.iter().position(|p| *p == ObjectPlace::Floor(pos.0, pos.1)).map(|i| i as u8)
    }

    /// Walls and bins block movement; objects and the mat do not.
    pub fn passable(&self, pos: (usize, usize)) -> bool {
        !self.is_wall(pos) && self.bin_at(pos).is_none()
    }

    pub fn neighbor(&self, pos: (usize, usize), dir: Dir) -> Option<(usize, usize)> {
        offset(pos, dir, self.height, self.width)
    }

    pub fn agent_pos(&self) -> (usize, usize) {
        (self.agent.row, self.agent.col)
    }

    pub fn facing_cell(&self) -> Option<(usize, usize)> {
        self.neighbor(self.agent_pos(), self.agent.facing)
    }

    /// Bins 4-adjacent to `pos`, in up, down, left, right order.
    pub fn adjacent_bins(&self, pos: (usize, usize)) -> Vec<u8> {
        Dir::ORDER.iter().filter_map(|&d| self.neighbor(pos, d).and_then(|p| self.bin_at(p))).collect()
    }

    /// Object that `pick` would take from `pos`: own cell first, then neighbours.
    pub fn pickable_from(&self, pos: (usize, usize)) -> Option<u8> {
        if let Some(o) = self.object_at(pos) {
            return Some(o);
        }
        Dir::ORDER.iter().find_map(|&d| self.neighbor(pos, d).and_then(|p| self.object_at(p)))
    }

    /// Applies `action` to the world and records the resulting event.
    pub fn apply(&mut self, action: Action) {
        let pos = self.agent_pos();
        self.last_event = match action {
            Action::Up | Action::Down | Action::Left | Action::Right => {
                let dir = action.direction().expect("move has a direction");
                self.agent.facing = dir;
                match self.neighbor(pos, dir) {
                    Some(next) if self.passable(next) => {
                        self.agent.row = next.0;
                        self.agent.col = next.1;
                        Event::Moved
                    }
                    _ => Event::Bumped,
                }
            }
            Action::Pick => match (self.inventory, self.pickable_from(pos)) {
                (None, Some(o)) => {
                    self.objects[o as usize] = ObjectPlace::Held;
                    self.inventory = Some(o);
                    Event::Picked(o)
                }
                _ => Event::Wasted,
            },
            Action::Drop => match self.inventory {
                None => Event::Wasted,
                Some(o) => {
                    let open_bin = self.adjacent_bins(pos).into_iter().find(|&b| self.bins[b as usize].open);
                    if let Some(b) = open_bin {
                        self.objects[o as usize] = ObjectPlace::Deposited(b);
                        self.inventory = None;
                        Event::Deposited { object: o, bin: b }
                    } else if self.object_at(pos).is_none() {
                        self.objects[o as usize] = ObjectPlace::Floor(pos.0, pos.1);
                        self.inventory = None;
                        Event::Dropped { object: o, pos }
                    } else {
                        Event::Wasted
                    }
                }
            },
            Action::Pedal | Action::Lift | Action::Grasp => match self.adjacent_bins(pos).first() {
                Some(&b) => {
                    let bin = &mut self.bins[b as usize];
                    if bin.mechanism != action {
                        Event::WrongMechanism(b)
                    } else if bin.open {
                        Event::Wasted
                    } else {
                        bin.open = true;
                        Event::Opened(b)
                    }
                }
                None => Event::Wasted,
            },
            Action::Stay => Event::Wasted,
        };
    }

    /// Cells reachable from `start` through passable cells.
    pub fn reachable(&self, start: (usize, usize)) -> Vec<bool> {
        let mut seen = vec![false; self.height * self.width];
        let mut queue = VecDeque::from([start]);
        seen[start.0 * self.width + start.1] = true;
        while let Some(p) = queue.pop_front() {
            for d in Dir::ORDER {
                if let Some(n) = self.neighbor(p, d) {
                    let i = n.0 * self.width + n.1;
                    if !seen[i] && self.passable(n) {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        seen
    }
}

/// Outcome of evaluating the task after one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskOutcome {
    pub reward: f64,
    pub subgoal: bool,
    pub done: bool,
}

/// Scores the world after an update. `subgoal_paid` guards the one-off
/// clean-up subgoal reward.
pub fn evaluate_task(world: &GridWorld, task: &GridTask, subgoal_paid: bool) -> TaskOutcome {
    let none = TaskOutcome { reward: 0.0, subgoal: false, done: false };
    let goal = TaskOutcome { reward: 1.0, subgoal: false, done: true };
    match task.kind {
        TaskKind::Find => {
            let target = task.object;
            match world.facing_cell() {
                Some(p) if world.object_at(p).is_some() && world.object_at(p) == target => goal,
                _ => none,
            }
        }
        TaskKind::Get => match world.last_event {
            Event::Picked(o) if Some(o) == task.object => goal,
            _ => none,
        },
        TaskKind::Rearrange => match world.last_event {
            Event::Dropped { object, pos } if Some(object) == task.object && pos == world.mat => goal,
            _ => none,
        },
        TaskKind::Open => match world.last_event {
            Event::Opened(b) if Some(b) == task.bin => goal,
            _ => none,
        },
        TaskKind::CleanUp => match world.last_event {
            Event::Picked(o) if Some(o) == task.object && !subgoal_paid => {
                TaskOutcome { reward: 0.5, subgoal: true, done: false }
            }
            Event::Deposited { object, bin } if Some(object) == task.object && Some(bin) == task.bin => goal,
            _ => none,
        },
        _ => none,
    }
}

#[derive(Clone, Debug)]
pub struct GridHome {
    config: GridHomeConfig,
    world: GridWorld,
    task: GridTask,
    description: TaskDescription,
    step_index: usize,
    subgoal_paid: bool,
    terminated: bool,
}

impl GridHome {
    pub fn reset(config: &GridHomeConfig, seed: EnvSeed) -> Result<GridHome, EnvError> {
        config.validate()?;
        let task = sample_task(config, seed)?;
        GridHome::reset_with_task(config, seed, task)
    }

    pub fn reset_with_task(config: &GridHomeConfig, seed: EnvSeed, task: GridTask) -> Result<GridHome, EnvError> {
        config.validate()?;
        task.check(config.objects.len(), config.bins.len())?;
        let world = generate_layout(config, seed)?;
        let description = describe(config, &task);
        Ok(GridHome {
            config: config.clone(),
            world,
            task,
            description,
            step_index: 0,
            subgoal_paid: false,
            terminated: false,
        })
    }

    pub fn config(&self) -> &GridHomeConfig {
        &self.config
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn task(&self) -> &GridTask {
        &self.task
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

    pub fn subgoal_paid(&self) -> bool {
        self.subgoal_paid
    }

    pub fn object_name(&self, id: u8) -> &str {
        &self.config.objects[id as usize]
    }

    pub fn bin_name(&self, id: u8) -> &str {
        &self.config.bins[id as usize]
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.terminated {
            return Err(EnvError::EpisodeClosed);
        }
        if action == Action::Stay {
            return Err(EnvError::UnknownAction(action));
        }
        self.world.apply(action);
        self.step_index += 1;
        let outcome = evaluate_task(&self.world, &self.task, self.subgoal_paid);
        if outcome.subgoal {
            self.subgoal_paid = true;
        }
        self.terminated = outcome.done || self.step_index >= self.config.limits.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward: outcome.reward,
            terminated: self.terminated,
            subgoal_just_completed: outcome.subgoal,
        })
    }

    pub fn observation(&self) -> Observation {
        let w = &self.world;
        let mut cells = Vec::with_capacity(w.height * w.width);
        for r in 0..w.height {
            for c in 0..w.width {
                let terrain = if w.is_wall((r, c)) {
                    Terrain::Wall
                } else if (r, c) == w.mat {
                    Terrain::Mat
                } else {
                    Terrain::Floor
                };
                cells.push(Cell { terrain, object: w.object_at((r, c)), entity: w.bin_at((r, c)) });
            }
        }
        let entities = w
            .bins
            .iter()
            .enumerate()
            .map(|(i, b)| EntityView { id: i as u8, name: b.name.clone(), row: b.pos.0, col: b.pos.1, open: Some(b.open) })
            .collect();
        Observation {
            height: w.height,
            width: w.width,
            cells,
            entities,
            agent: w.agent,
            inventory: w.inventory,
            progress: 0,
            step_index: self.step_index,
        }
    }
}

fn describe(config: &GridHomeConfig, task: &GridTask) -> TaskDescription {
    let object = task.object.map(|o| config.objects[o as usize].as_str()).unwrap_or("");
    let bin = task.bin.map(|b| config.bins[b as usize].as_str()).unwrap_or("");
    let (text, target_ids) = match task.kind {
        TaskKind::Find => (format!("find the {object}"), vec![task.object.unwrap()]),
        TaskKind::Get => (format!("get the {object}"), vec![task.object.unwrap()]),
        TaskKind::Rearrange => (format!("move the {object} to the mat"), vec![task.object.unwrap()]),
        TaskKind::Open => (format!("open the {bin} bin"), vec![task.bin.unwrap()]),
        TaskKind::CleanUp => {
            (format!("put the {object} in the {bin} bin"), vec![task.object.unwrap(), task.bin.unwrap()])
        }
        _ => unreachable!("validated gridhome task"),
    };
    TaskDescription { text, kind: task.kind, target_ids }
}

/// Samples a layout whose free cells are all mutually reachable and whose
/// bins can each be approached from some free cell.
pub fn generate_layout(config: &GridHomeConfig, seed: EnvSeed) -> Result<GridWorld, EnvError> {
    let mut rng = rng_for(seed.0, Stream::Layout);
    let (h, w) = (config.height, config.width);
    let interior: Vec<(usize, usize)> =
        (1..h - 1).flat_map(|r| (1..w - 1).map(move |c| (r, c))).collect();
    let bin_spacing = if h.min(w) >= 6 { 3 } else { 1 };

    'attempt: for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut free = interior.clone();
        free.shuffle(&mut rng);
        let mut walls = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                    walls[r * w + c] = true;
                }
            }
        }
        for _ in 0..config.interior_walls {
            let p = free.pop().expect("capacity validated");
            walls[p.0 * w + p.1] = true;
        }
        let mut bins: Vec<Bin> = Vec::with_capacity(config.bins.len());
        for name in &config.bins {
            let idx = free
                .iter()
                .position(|&p| bins.iter().all(|b| super::manhattan(b.pos, p) >= bin_spacing));
            let Some(idx) = idx else { continue 'attempt };
            let pos = free.remove(idx);
            bins.push(Bin { name: name.clone(), pos, mechanism: Action::Pedal, open: false });
        }
        let mat_idx = free.iter().position(|&p| bins.iter().all(|b| super::manhattan(b.pos, p) > 1));
        let Some(mat_idx) = mat_idx else { continue 'attempt };
        let mat = free.remove(mat_idx);
        let mut objects = Vec::with_capacity(config.objects.len());
        for _ in &config.objects {
            let p = free.pop().expect("capacity validated");
            objects.push(ObjectPlace::Floor(p.0, p.1));
        }
        let Some(agent_pos) = free.pop() else { continue 'attempt };
        let facing = Dir::ORDER[rng.gen_range(0..4)];
        for bin in &mut bins {
            bin.mechanism = MECHANISMS[rng.gen_range(0..MECHANISMS.len())];
        }
        let world = GridWorld {
            height: h,
            width: w,
            walls,
            mat,
            objects,
            bins,
            agent: Pose { row: agent_pos.0, col: agent_pos.1, facing },
            inventory: None,
            last_event: Event::None,
        };
        let seen = world.reachable(agent_pos);
        let all_free_reached = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&p| world.passable(p))
            .all(|p| seen[p.0 * w + p.1]);
        let bins_reachable = world.bins.iter().all(|b| {
            Dir::ORDER.iter().any(|&d| world.neighbor(b.pos, d).is_some_and(|n| seen[n.0 * w + n.1]))
        });
        if all_free_reached && bins_reachable {
            return Ok(world);
        }
    }
    Err(EnvError::config("interior_walls", "could not sample a connected layout"))
}
