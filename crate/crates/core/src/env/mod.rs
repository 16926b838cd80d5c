//! Environment contract shared by both grid worlds.
//!
//! An episode is a pure function of `(config, seed, action sequence)`. Each
//! tick runs entity dynamics first, then the agent action, then reward and
//! termination evaluation.

pub mod courier;
pub mod gridhome;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use courier::{Courier, CourierConfig, CourierOrder};
pub use gridhome::{GridHome, GridHomeConfig, GridTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("episode is closed; call reset before stepping again")]
    EpisodeClosed,
    #[error("action `{0}` is not available in this environment")]
    UnknownAction(Action),
}

impl EnvError {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        EnvError::Config { field, reason: reason.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[serde(alias = "homegrid")]
    GridHome,
    #[serde(alias = "messenger")]
    Courier,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::GridHome => "gridhome",
            EnvKind::Courier => "courier",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gridhome" | "homegrid" => Ok(EnvKind::GridHome),
            "courier" | "messenger" => Ok(EnvKind::Courier),
            other => Err(format!("unknown environment `{other}` (expected gridhome or courier)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Pick,
    Drop,
    Pedal,
    Lift,
    Grasp,
    Stay,
}

pub const GRIDHOME_ACTIONS: [Action; 9] = [
    Action::Left,
    Action::Right,
    Action::Up,
    Action::Down,
    Action::Pick,
    Action::Drop,
    Action::Pedal,
    Action::Lift,
    Action::Grasp,
];

pub const COURIER_ACTIONS: [Action; 5] =
    [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

/// Ordered action inventory; the order fixes action-head indices and tie-breaks.
pub fn action_set(kind: EnvKind) -> &'static [Action] {
    match kind {
        EnvKind::GridHome => &GRIDHOME_ACTIONS,
        EnvKind::Courier => &COURIER_ACTIONS,
    }
}

pub fn action_index(kind: EnvKind, action: Action) -> Option<usize> {
    action_set(kind).iter().position(|&a| a == action)
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
            Action::Pick => "pick",
            Action::Drop => "drop",
            Action::Pedal => "pedal",
            Action::Lift => "lift",
            Action::Grasp => "grasp",
            Action::Stay => "stay",
        }
    }

    pub fn direction(self) -> Option<Dir> {
        match self {
            Action::Up => Some(Dir::N),
            Action::Down => Some(Dir::S),
            Action::Left => Some(Dir::W),
            Action::Right => Some(Dir::E),
            _ => None,
        }
    }

    pub fn is_move(self) -> bool {
        self.direction().is_some()
    }

    pub fn is_mechanism(self) -> bool {
        matches!(self, Action::Pedal | Action::Lift | Action::Grasp)
    }

    /// The reverse move; non-movement actions have none.
    pub fn opposite(self) -> Option<Action> {
        self.direction().map(|d| d.opposite().action())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GRIDHOME_ACTIONS
            .iter()
            .chain(std::iter::once(&Action::Stay))
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// Compass facing. Expansion order everywhere is N, S, W, E, matching the
/// up, down, left, right tie-break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub const ORDER: [Dir; 4] = [Dir::N, Dir::S, Dir::W, Dir::E];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Dir::N => (-1, 0),
            Dir::S => (1, 0),
            Dir::W => (0, -1),
            Dir::E => (0, 1),
        }
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::N => Dir::S,
            Dir::S => Dir::N,
            Dir::E => Dir::W,
            Dir::W => Dir::E,
        }
    }

    pub fn action(self) -> Action {
        match self {
            Dir::N => Action::Up,
            Dir::S => Action::Down,
            Dir::W => Action::Left,
            Dir::E => Action::Right,
        }
    }

    fn code(self) -> char {
        match self {
            Dir::N => 'N',
            Dir::S => 'S',
            Dir::E => 'E',
            Dir::W => 'W',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvSeed(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub row: usize,
    pub col: usize,
    pub facing: Dir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Terrain {
    Floor,
    Wall,
    Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub terrain: Terrain,
    pub object: Option<u8>,
    pub entity: Option<u8>,
}

impl Cell {
    pub const FLOOR: Cell = Cell { terrain: Terrain::Floor, object: None, entity: None };
}

/// Visible part of an entity: bins in GridHome, characters in Courier.
/// Hidden attributes (bin mechanisms, courier roles) are never exposed here.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityView {
    pub id: u8,
    pub name: String,
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "ObservationRepr", try_from = "ObservationRepr")]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    /// Row-major cell descriptors.
    pub cells: Vec<Cell>,
    pub entities: Vec<EntityView>,
    pub agent: Pose,
    pub inventory: Option<u8>,
    /// Number of ordered task milestones reached (Courier visit order).
    pub progress: u8,
    pub step_index: usize,
}

impl Observation {
    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.width + col]
    }
}

/// Compact symbolic form: one string per row, two characters per cell
/// (terrain `#`/`.`/`_`, then occupant `.`, object digit, or entity letter).
#[derive(Serialize, Deserialize)]
struct ObservationRepr {
    rows: Vec<String>,
    entities: Vec<EntityView>,
    agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inventory: Option<u8>,
    #[serde(default)]
    progress: u8,
    step: usize,
}

impl From<Observation> for ObservationRepr {
    fn from(o: Observation) -> Self {
        let rows = (0..o.height)
            .map(|r| {
                let mut s = String::with_capacity(o.width * 2);
                for c in 0..o.width {
                    let cell = o.cell(r, c);
                    s.push(match cell.terrain {
                        Terrain::Floor => '.',
                        Terrain::Wall => '#',
                        Terrain::Mat => '_',
                    });
                    s.push(match (cell.object, cell.entity) {
                        (Some(id), _) => char::from(b'0' + id),
                        (None, Some(id)) => char::from(b'a' + id),
                        (None, None) => '.',
                    });
                }
                s
            })
            .collect();
        let agent = format!("{},{},{}", o.agent.row, o.agent.col, o.agent.facing.code());
        ObservationRepr {
            rows,
            entities: o.entities,
            agent,
            inventory: o.inventory,
            progress: o.progress,
            step: o.step_index,
        }
    }
}

impl TryFrom<ObservationRepr> for Observation {
    type Error = String;
    fn try_from(r: ObservationRepr) -> Result<Self, Self::Error> {
        let height = r.rows.len();
        let width = r.rows.first().map(|s| s.len() / 2).unwrap_or(0);
        let mut cells = Vec::with_capacity(height * width);
        for row in &r.rows {
            let bytes = row.as_bytes();
            if bytes.len() != width * 2 {
                return Err("ragged observation grid".into());
            }
            for pair in bytes.chunks(2) {
                let terrain = match pair[0] {
                    b'.' => Terrain::Floor,
                    b'#' => Terrain::Wall,
                    b'_' => Terrain::Mat,
                    other => return Err(format!("bad terrain code `{}`", other as char)),
                };
                let (object, entity) = match pair[1] {
                    b'.' => (None, None),
                    d @ b'0'..=b'9' => (Some(d - b'0'), None),
                    e @ b'a'..=b'z' => (None, Some(e - b'a')),
                    other => return Err(format!("bad occupant code `{}`", other as char)),
                };
                cells.push(Cell { terrain, object, entity });
            }
        }
        // Entities standing on an object cell are recovered from the entity list.
        for e in &r.entities {
            if e.row < height && e.col < width {
                let cell = &mut cells[e.row * width + e.col];
                if cell.entity.is_none() {
                    cell.entity = Some(e.id);
                }
            }
        }
        let parts: Vec<&str> = r.agent.split(',').collect();
        let pose = match parts.as_slice() {
            [row, col, f] => Pose {
                row: row.parse().map_err(|_| "bad agent row")?,
                col: col.parse().map_err(|_| "bad agent col")?,
                facing: match *f {
                    "N" => Dir::N,
                    "S" => Dir::S,
                    "E" => Dir::E,
                    "W" => Dir::W,
                    _ => return Err("bad agent facing".into()),
                },
            },
            _ => return Err("bad agent pose".into()),
        };
        Ok(Observation {
            height,
            width,
            cells,
            entities: r.entities,
            agent: pose,
            inventory: r.inventory,
            progress: r.progress,
            step_index: r.step,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub subgoal_just_completed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Find,
    Get,
    Rearrange,
    Open,
    CleanUp,
    MessageThenGoal,
    GoalThenMessage,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskDescription {
    pub text: String,
    pub kind: TaskKind,
    pub target_ids: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLimits {
    pub max_steps: usize,
    pub discount: f64,
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps < 1 {
            return Err(EnvError::config("max_steps", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(EnvError::config("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One completed step of interaction: what the agent saw, was told and did,
/// and the reward that followed.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub observation: Observation,
    pub feedback: String,
    pub action: Action,
    pub reward: f64,
}

/// Interaction history `h_t`. Append-only within an episode; the number of
/// completed entries always equals the current observation's step index.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub task: TaskDescription,
    entries: Vec<HistoryEntry>,
    current: Observation,
    current_feedback: String,
}

impl History {
    pub fn new(task: TaskDescription, initial: Observation) -> Self {
        History { task, entries: Vec::new(), current: initial, current_feedback: String::new() }
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn current(&self) -> &Observation {
        &self.current
    }

    pub fn current_feedback(&self) -> &str {
        &self.current_feedback
    }

    /// Sets the utterance received at the current step, before acting.
    pub fn set_feedback(&mut self, text: impl Into<String>) {
        self.current_feedback = text.into();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_action(&self) -> Option<Action> {
        self.entries.last().map(|e| e.action)
    }

    pub fn total_reward(&self) -> f64 {
        self.entries.iter().map(|e| e.reward).sum()
    }

    /// Records the action taken at the current step and advances to the
    /// observation it produced.
    pub fn commit(&mut self, action: Action, result: &StepResult) {
        let observation = std::mem::replace(&mut self.current, result.observation.clone());
        let feedback = std::mem::take(&mut self.current_feedback);
        self.entries.push(HistoryEntry { observation, feedback, action, reward: result.reward });
        debug_assert_eq!(self.entries.len(), self.current.step_index);
    }
}

/// Tagged environment configuration as it appears in run config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    #[serde(alias = "homegrid")]
    GridHome(GridHomeConfig),
    #[serde(alias = "messenger")]
    Courier(CourierConfig),
}

impl EnvConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::GridHome => EnvConfig::GridHome(GridHomeConfig::default()),
            EnvKind::Courier => EnvConfig::Courier(CourierConfig::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::GridHome(_) => EnvKind::GridHome,
            EnvConfig::Courier(_) => EnvKind::Courier,
        }
    }

    pub fn limits(&self) -> EpisodeLimits {
        match self {
            EnvConfig::GridHome(c) => c.limits,
            EnvConfig::Courier(c) => c.limits,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::GridHome(c) => c.validate(),
            EnvConfig::Courier(c) => c.validate(),
        }
    }
}

/// A live environment instance of either kind.
#[derive(Clone, Debug)]
pub enum Env {
    GridHome(GridHome),
    Courier(Courier),
}

impl Env {
    pub fn reset(config: &EnvConfig, seed: EnvSeed) -> Result<(Env, Observation, TaskDescription), EnvError> {
        match config {
            EnvConfig::GridHome(c) => {
                let env = GridHome::reset(c, seed)?;
                let (o, t) = (env.observation(), env.task_description().clone());
                Ok((Env::GridHome(env), o, t))
            }
            EnvConfig::Courier(c) => {
                let env = Courier::reset(c, seed)?;
                let (o, t) = (env.observation(), env.task_description().clone());
                Ok((Env::Courier(env), o, t))
            }
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::GridHome(_) => EnvKind::GridHome,
            Env::Courier(_) => EnvKind::Courier,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        match self {
            Env::GridHome(e) => e.step(action),
            Env::Courier(e) => e.step(action),
        }
    }

    pub fn observation(&self) -> Observation {
        match self {
            Env::GridHome(e) => e.observation(),
            Env::Courier(e) => e.observation(),
        }
    }

    pub fn task_description(&self) -> &TaskDescription {
        match self {
            Env::GridHome(e) => e.task_description(),
            Env::Courier(e) => e.task_description(),
        }
    }

    pub fn is_terminated(&self) -> bool {
        match self {
            Env::GridHome(e) => e.is_terminated(),
            Env::Courier(e) => e.is_terminated(),
        }
    }

    pub fn step_index(&self) -> usize {
        match self {
            Env::GridHome(e) => e.step_index(),
            Env::Courier(e) => e.step_index(),
        }
    }

    pub fn limits(&self) -> EpisodeLimits {
        match self {
            Env::GridHome(e) => e.config().limits,
            Env::Courier(e) => e.config().limits,
        }
    }

    pub fn action_set(&self) -> &'static [Action] {
        action_set(self.kind())
    }
}

/// Bounded 4-neighbour step on a `height x width` grid.
pub(crate) fn offset(pos: (usize, usize), dir: Dir, height: usize, width: usize) -> Option<(usize, usize)> {
    let (dr, dc) = dir.delta();
    let r = pos.0 as isize + dr;
    let c = pos.1 as isize + dc;
    (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((r as usize, c as usize))
}

pub(crate) fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

pub(crate) fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_sets_are_stable() {
        let names: Vec<_> = action_set(EnvKind::GridHome).iter().map(|a| a.name()).collect();
        assert_eq!(names, ["left", "right", "up", "down", "pick", "drop", "pedal", "lift", "grasp"]);
        let names: Vec<_> = action_set(EnvKind::Courier).iter().map(|a| a.name()).collect();
        assert_eq!(names, ["up", "down", "left", "right", "stay"]);
        assert_eq!(action_set(EnvKind::GridHome), action_set(EnvKind::GridHome));
    }

    #[test]
    fn action_names_parse_back() {
        for a in GRIDHOME_ACTIONS.iter().chain(COURIER_ACTIONS.iter()) {
            assert_eq!(a.name().parse::<Action>().unwrap(), *a);
        }
        assert!("jump".parse::<Action>().is_err());
    }

    #[test]
    fn opposites() {
        assert_eq!(Action::Up.opposite(), Some(Action::Down));
        assert_eq!(Action::Left.opposite(), Some(Action::Right));
        assert_eq!(Action::Pick.opposite(), None);
    }

    #[test]
    fn observation_round_trips_through_compact_form() {
        let config = EnvConfig::default_for(EnvKind::GridHome);
        let (_, obs, _) = Env::reset(&config, EnvSeed(11)).unwrap();
        let json = serde_json::to_string(&obs).unwrap();
        assert!(json.contains("\"rows\""));
        let back: Observation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, obs);

        let config = EnvConfig::default_for(EnvKind::Courier);
        let (_, obs, _) = Env::reset(&config, EnvSeed(11)).unwrap();
        let back: Observation = serde_json::from_str(&serde_json::to_string(&obs).unwrap()).unwrap();
        assert_eq!(back, obs);
    }
}
