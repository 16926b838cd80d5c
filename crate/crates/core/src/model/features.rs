//! Fixed state encoders turning symbolic observations into feature vectors.
//! GridHome features are egocentric and relative to the task's targets;
//! Courier features describe each character by name and position only.

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvKind, Observation, TaskDescription, TaskKind, Terrain};

/// Radius of the egocentric GridHome window.
const PATCH_RADIUS: isize = 2;
const PATCH_CHANNELS: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureSpec {
    GridHome,
    Courier { names: Vec<String>, max_entities: usize },
}

struct GridTargets {
    object: Option<u8>,
    bin: Option<u8>,
}

fn grid_targets(task: &TaskDescription) -> GridTargets {
    let first = task.target_ids.first().copied();
    match task.kind {
        TaskKind::Open => GridTargets { object: None, bin: first },
        TaskKind::CleanUp => GridTargets { object: first, bin: task.target_ids.get(1).copied() },
        _ => GridTargets { object: first, bin: None },
    }
}

impl FeatureSpec {
    pub fn for_env(cfg: &EnvConfig) -> Self {
        match cfg {
            EnvConfig::GridHome(_) => FeatureSpec::GridHome,
            EnvConfig::Courier(c) => FeatureSpec::Courier { names: c.names.clone(), max_entities: c.entity_count() },
        }
    }

    pub fn env_kind(&self) -> EnvKind {
        match self {
            FeatureSpec::GridHome => EnvKind::GridHome,
            FeatureSpec::Courier { .. } => EnvKind::Courier,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureSpec::GridHome => {
                let side = (2 * PATCH_RADIUS + 1) as usize;
                side * side * PATCH_CHANNELS + 4 + 3 + 4 + 5 + 5 + 3 + 7 + 1
            }
            FeatureSpec::Courier { names, max_entities } => max_entities * (names.len() + 8) + 6 + 4,
        }
    }

    pub fn encode(&self, obs: &Observation, task: &TaskDescription) -> Vec<f64> {
        let f = match self {
            FeatureSpec::GridHome => gridhome(obs, task),
            FeatureSpec::Courier { names, max_entities } => courier(obs, names, *max_entities),
        };
        debug_assert_eq!(f.len(), self.dim());
        f
    }
}

fn rel(from: (usize, usize), to: (usize, usize), h: usize, w: usize) -> [f64; 3] {
    let dr = to.0 as f64 - from.0 as f64;
    let dc = to.1 as f64 - from.1 as f64;
    [dr / h as f64, dc / w as f64, (dr.abs() + dc.abs()) / (h + w) as f64]
}

fn gridhome(obs: &Observation, task: &TaskDescription) -> Vec<f64> {
    let t = grid_targets(task);
    let (h, w) = (obs.height, obs.width);
    let agent = (obs.agent.row, obs.agent.col);
    let bin_open = |id: u8| obs.entities.iter().find(|e| e.id == id).and_then(|e| e.open).unwrap_or(false);
    let mut f = Vec::with_capacity(220);

    for dr in -PATCH_RADIUS..=PATCH_RADIUS {
        for dc in -PATCH_RADIUS..=PATCH_RADIUS {
            let r = agent.0 as isize + dr;
            let c = agent.1 as isize + dc;
            let mut ch = [0.0; PATCH_CHANNELS];
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                ch[0] = 1.0;
            } else {
                let cell = obs.cell(r as usize, c as usize);
                ch[0] = (cell.terrain == Terrain::Wall) as u8 as f64;
                ch[1] = (cell.terrain == Terrain::Mat) as u8 as f64;
                if let Some(o) = cell.object {
                    ch[2] = 1.0;
                    ch[3] = (Some(o) == t.object) as u8 as f64;
                }
                if let Some(b) = cell.entity {
                    ch[4] = 1.0;
                    ch[5] = (Some(b) == t.bin) as u8 as f64;
                    ch[6] = bin_open(b) as u8 as f64;
                }
            }
            f.extend_from_slice(&ch);
        }
    }

    let mut facing = [0.0; 4];
    facing[obs.agent.facing as usize] = 1.0;
    f.extend_from_slice(&facing);

    let held = obs.inventory;
    f.extend_from_slice(&[
        held.is_none() as u8 as f64,
        (held.is_some() && held == t.object) as u8 as f64,
        (held.is_some() && held != t.object) as u8 as f64,
    ]);

    let find = |pred: &dyn Fn(&crate::env::Cell) -> bool| {
        (0..h * w).find(|&i| pred(&obs.cells[i])).map(|i| (i / w, i % w))
    };
    let target_obj = t.object.and_then(|o| find(&|c| c.object == Some(o)));
    match target_obj {
        Some(p) => {
            f.push(1.0);
            f.extend_from_slice(&rel(agent, p, h, w));
        }
        None => f.extend_from_slice(&[0.0; 4]),
    }

    match t.bin.and_then(|b| obs.entities.iter().find(|e| e.id == b)) {
        Some(e) => {
            f.push(1.0);
            f.extend_from_slice(&rel(agent, (e.row, e.col), h, w));
            f.push(e.open.unwrap_or(false) as u8 as f64);
        }
        None => f.extend_from_slice(&[0.0; 5]),
    }

    let mat = find(&|c| c.terrain == Terrain::Mat).unwrap_or(agent);
    f.extend_from_slice(&rel(agent, mat, h, w));
    let on_mat = obs.cell(mat.0, mat.1).object;
    f.push((on_mat.is_some() && on_mat != t.object) as u8 as f64);
    f.push((on_mat.is_some() && on_mat == t.object) as u8 as f64);

    // Nearest object that is not the target.
    let other = (0..h * w)
        .filter(|&i| obs.cells[i].object.is_some_and(|o| Some(o) != t.object))
        .map(|i| (i / w, i % w))
        .min_by_key(|&p| (p.0.abs_diff(agent.0) + p.1.abs_diff(agent.1), p));
    match other {
        Some(p) => {
            let r = rel(agent, p, h, w);
            f.extend_from_slice(&[1.0, r[0], r[1]]);
        }
        None => f.extend_from_slice(&[0.0; 3]),
    }

    let (fr, fc) = obs.agent.facing.delta();
    let ahead = (agent.0 as isize + fr, agent.1 as isize + fc);
    let mut front = [0.0; 7];
    if ahead.0 < 0 || ahead.1 < 0 || ahead.0 >= h as isize || ahead.1 >= w as isize {
        front[0] = 1.0;
    } else {
        let cell = obs.cell(ahead.0 as usize, ahead.1 as usize);
        match (cell.terrain, cell.object, cell.entity) {
            (Terrain::Wall, _, _) => front[0] = 1.0,
            (_, Some(o), _) if Some(o) == t.object => front[1] = 1.0,
            (_, Some(_), _) => front[2] = 1.0,
            (_, _, Some(b)) if Some(b) == t.bin => front[3] = 1.0,
            (_, _, Some(_)) => front[4] = 1.0,
            (Terrain::Mat, _, _) => front[5] = 1.0,
            _ => front[6] = 1.0,
        }
    }
    f.extend_from_slice(&front);

    f.push(obs.step_index as f64 / 100.0);
    f
}

fn courier(obs: &Observation, names: &[String], max_entities: usize) -> Vec<f64> {
    let (h, w) = (obs.height, obs.width);
    let agent = (obs.agent.row, obs.agent.col);
    let mut f = Vec::with_capacity(max_entities * (names.len() + 8) + 10);
    for slot in 0..max_entities {
        let mut one_hot = vec![0.0; names.len()];
        match obs.entities.iter().find(|e| e.id as usize == slot) {
            Some(e) => {
                if let Some(i) = names.iter().position(|n| *n == e.name) {
                    one_hot[i] = 1.0;
                }
                f.extend_from_slice(&one_hot);
                f.push(1.0);
                let dr = e.row as f64 - agent.0 as f64;
                let dc = e.col as f64 - agent.1 as f64;
                f.push(dr / h as f64);
                f.push(dc / w as f64);
                f.push(dr.abs().max(dc.abs()) / h.max(w) as f64);
                // Directly up, down, left, right of the agent.
                f.push((dr == -1.0 && dc == 0.0) as u8 as f64);
                f.push((dr == 1.0 && dc == 0.0) as u8 as f64);
                f.push((dr == 0.0 && dc == -1.0) as u8 as f64);
                f.push((dr == 0.0 && dc == 1.0) as u8 as f64);
            }
            None => {
                f.extend_from_slice(&one_hot);
                f.extend_from_slice(&[0.0; 8]);
            }
        }
    }
    f.push(agent.0 as f64 / h as f64);
    f.push(agent.1 as f64 / w as f64);
    f.push((agent.0 == 0) as u8 as f64);
    f.push((agent.0 + 1 == h) as u8 as f64);
    f.push((agent.1 == 0) as u8 as f64);
    f.push((agent.1 + 1 == w) as u8 as f64);
    f.push(obs.inventory.is_some() as u8 as f64);
    let mut progress = [0.0; 3];
    progress[(obs.progress as usize).min(2)] = 1.0;
    f.extend_from_slice(&progress);
    f
}
