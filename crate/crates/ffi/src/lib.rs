//! C ABI over the environments, the expert, the embedder and trained
//! agents. Every handle is opaque and owned by the caller until passed to
//! its `_free` function. Every fallible call returns a `TchStatus`; the
//! message of the last failure on the calling thread is available through
//! `tch_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use teachable::embed::Embedder;
use teachable::env::{action_index, action_set, Env, EnvConfig, EnvKind, EnvSeed, History};
use teachable::eval::path_weighted_reward;
use teachable::expert::{Expert, Policy};
use teachable::model::{Agent, Checkpoint};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TchStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Env = 5,
    Policy = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TchEnvKind {
    Gridhome = 0,
    Courier = 1,
}

impl From<TchEnvKind> for EnvKind {
    fn from(k: TchEnvKind) -> Self {
        match k {
            TchEnvKind::Gridhome => EnvKind::GridHome,
            TchEnvKind::Courier => EnvKind::Courier,
        }
    }
}

/// One running episode: environment state plus the history an agent sees.
pub struct TchEpisode {
    env: Env,
    history: History,
}

/// A trained agent loaded from a checkpoint.
pub struct TchAgent {
    agent: Agent,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: TchStatus, msg: impl Into<String>) -> TchStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

/// Runs `f`, turning panics into `TchStatus::Panic`.
fn guard(f: impl FnOnce() -> TchStatus) -> TchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TchStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TchStatus> {
    if p.is_null() {
        return Err(fail(TchStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TchStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `s` with a terminating NUL into `buf`. `out_len`, when not null,
/// receives the length of `s` without the NUL, also on `BufferTooSmall`.
unsafe fn copy_out(s: &str, buf: *mut c_char, buf_len: usize, out_len: *mut usize) -> TchStatus {
    if !out_len.is_null() {
        *out_len = s.len();
    }
    if buf.is_null() {
        return if out_len.is_null() { fail(TchStatus::NullPointer, "buf is null") } else { TchStatus::Ok };
    }
    if buf_len < s.len() + 1 {
        return fail(TchStatus::BufferTooSmall, format!("need {} bytes, have {buf_len}", s.len() + 1));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    TchStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tch_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `buf_len` bytes or null; `out_len` null or valid.
#[no_mangle]
pub unsafe extern "C" fn tch_last_error_message(buf: *mut c_char, buf_len: usize, out_len: *mut usize) -> TchStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, buf_len, out_len)
}

/// Starts an episode of `kind` with default settings from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_new(kind: TchEnvKind, seed: u64, out: *mut *mut TchEpisode) -> TchStatus {
    guard(|| {
        if out.is_null() {
            return fail(TchStatus::NullPointer, "out is null");
        }
        match Env::reset(&EnvConfig::default_for(kind.into()), EnvSeed(seed)) {
            Ok((env, obs, task)) => {
                *out = Box::into_raw(Box::new(TchEpisode { env, history: History::new(task, obs) }));
                TchStatus::Ok
            }
            Err(e) => fail(TchStatus::Env, e.to_string()),
        }
    })
}

/// Releases an episode; null is ignored.
///
/// # Safety
/// `ep` must come from `tch_episode_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_free(ep: *mut TchEpisode) {
    if !ep.is_null() {
        drop(Box::from_raw(ep));
    }
}

unsafe fn episode<'a>(ep: *mut TchEpisode) -> Result<&'a mut TchEpisode, TchStatus> {
    ep.as_mut().ok_or_else(|| fail(TchStatus::NullPointer, "episode is null"))
}

/// Number of discrete actions; indices are `0..count`.
///
/// # Safety
/// `ep` must be a live episode and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_action_count(ep: *mut TchEpisode, out: *mut usize) -> TchStatus {
    guard(|| match (episode(ep), out.is_null()) {
        (Err(s), _) => s,
        (_, true) => fail(TchStatus::NullPointer, "out is null"),
        (Ok(e), false) => {
            *out = e.env.action_set().len();
            TchStatus::Ok
        }
    })
}

/// Name of action `index`, e.g. `"left"` or `"pedal"`.
///
/// # Safety
/// `ep` must be a live episode; `buf`/`out_len` as in `tch_last_error_message`.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_action_name(
    ep: *mut TchEpisode,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> TchStatus {
    guard(|| {
        let e = match episode(ep) {
            Ok(e) => e,
            Err(s) => return s,
        };
        match e.env.action_set().get(index) {
            Some(a) => copy_out(a.name(), buf, buf_len, out_len),
            None => fail(TchStatus::InvalidArgument, format!("action index {index} out of range")),
        }
    })
}

/// Task description text given to the agent before the first step.
///
/// # Safety
/// `ep` must be a live episode; `buf`/`out_len` as in `tch_last_error_message`.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_task_text(ep: *mut TchEpisode, buf: *mut c_char, buf_len: usize, out_len: *mut usize) -> TchStatus {
    guard(|| match episode(ep) {
        Ok(e) => copy_out(&e.history.task.text, buf, buf_len, out_len),
        Err(s) => s,
    })
}

/// Sets the feedback utterance the agent sees at the current step.
///
/// # Safety
/// `ep` must be a live episode and `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_set_feedback(ep: *mut TchEpisode, text: *const c_char) -> TchStatus {
    guard(|| {
        let e = match episode(ep) {
            Ok(e) => e,
            Err(s) => return s,
        };
        match str_arg(text, "text") {
            Ok(t) => {
                e.history.set_feedback(t);
                TchStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Applies action `index`. `out_reward` and `out_done` may be null.
///
/// # Safety
/// `ep` must be a live episode; output pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_step(ep: *mut TchEpisode, index: usize, out_reward: *mut f64, out_done: *mut bool) -> TchStatus {
    guard(|| {
        let e = match episode(ep) {
            Ok(e) => e,
            Err(s) => return s,
        };
        let Some(&a) = e.env.action_set().get(index) else {
            return fail(TchStatus::InvalidArgument, format!("action index {index} out of range"));
        };
        match e.env.step(a) {
            Ok(r) => {
                e.history.commit(a, &r);
                if !out_reward.is_null() {
                    *out_reward = r.reward;
                }
                if !out_done.is_null() {
                    *out_done = r.terminated;
                }
                TchStatus::Ok
            }
            Err(err) => fail(TchStatus::Env, err.to_string()),
        }
    })
}

/// Whether the episode has ended.
///
/// # Safety
/// `ep` must be a live episode and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_is_done(ep: *mut TchEpisode, out: *mut bool) -> TchStatus {
    guard(|| match (episode(ep), out.is_null()) {
        (Err(s), _) => s,
        (_, true) => fail(TchStatus::NullPointer, "out is null"),
        (Ok(e), false) => {
            *out = e.env.is_terminated();
            TchStatus::Ok
        }
    })
}

/// The privileged expert's next action index from the current state.
///
/// # Safety
/// `ep` must be a live episode and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tch_episode_expert_action(ep: *mut TchEpisode, out: *mut usize) -> TchStatus {
    guard(|| {
        let e = match episode(ep) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(TchStatus::NullPointer, "out is null");
        }
        match Expert::default().act(&e.env, &e.history) {
            Ok(a) => {
                *out = action_index(e.env.kind(), a).expect("expert acts within the action set");
                TchStatus::Ok
            }
            Err(err) => fail(TchStatus::Policy, err.to_string()),
        }
    })
}

/// Loads a checkpoint as a greedy agent.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn tch_agent_load(path: *const c_char, out: *mut *mut TchAgent) -> TchStatus {
    guard(|| {
        if out.is_null() {
            return fail(TchStatus::NullPointer, "out is null");
        }
        let p = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ck = match Checkpoint::load(Path::new(p)) {
            Ok(c) => c,
            Err(e @ teachable::model::CheckpointError::Io { .. }) => return fail(TchStatus::Io, e.to_string()),
            Err(e) => return fail(TchStatus::Model, e.to_string()),
        };
        let model = match ck.model() {
            Ok(m) => m,
            Err(e) => return fail(TchStatus::Model, e.to_string()),
        };
        let agent = Agent::new(Arc::new(model), ck.features.clone(), Embedder::hashed(ck.embed_dim));
        *out = Box::into_raw(Box::new(TchAgent { agent }));
        TchStatus::Ok
    })
}

/// Releases an agent; null is ignored.
///
/// # Safety
/// `agent` must come from `tch_agent_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tch_agent_free(agent: *mut TchAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// The agent's action index for the episode's current step.
///
/// # Safety
/// Both handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tch_agent_act(agent: *mut TchAgent, ep: *mut TchEpisode, out: *mut usize) -> TchStatus {
    guard(|| {
        let Some(ag) = agent.as_mut() else { return fail(TchStatus::NullPointer, "agent is null") };
        let e = match episode(ep) {
            Ok(e) => e,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(TchStatus::NullPointer, "out is null");
        }
        match ag.agent.act(&e.env, &e.history) {
            Ok(a) => {
                *out = action_index(e.env.kind(), a).expect("agent acts within the action set");
                TchStatus::Ok
            }
            Err(err) => fail(TchStatus::Policy, err.to_string()),
        }
    })
}

/// Hashed sentence embedding of width `dim` written into `out`.
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tch_embed(text: *const c_char, dim: usize, out: *mut f64) -> TchStatus {
    guard(|| {
        let t = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(TchStatus::NullPointer, "out is null");
        }
        if dim == 0 {
            return fail(TchStatus::InvalidArgument, "dim must be positive");
        }
        let v = Embedder::hashed(dim).embed(t);
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, dim);
        TchStatus::Ok
    })
}

/// `reward * expert_steps / max(steps, expert_steps)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tch_path_weighted_reward(reward: f64, steps: usize, expert_steps: usize, out: *mut f64) -> TchStatus {
    if out.is_null() {
        return fail(TchStatus::NullPointer, "out is null");
    }
    if steps == 0 || expert_steps == 0 {
        return fail(TchStatus::InvalidArgument, "step counts must be at least 1");
    }
    *out = path_weighted_reward(reward, steps, expert_steps);
    TchStatus::Ok
}

/// Number of actions for an environment kind, without an episode.
#[no_mangle]
pub extern "C" fn tch_action_count(kind: TchEnvKind) -> usize {
    action_set(kind.into()).len()
}
