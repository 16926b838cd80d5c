use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use teachable_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let mut n = 0usize;
    unsafe { tch_last_error_message(buf.as_mut_ptr(), buf.len(), &mut n) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn expert_drives_an_episode_to_success() {
    for kind in [TchEnvKind::Gridhome, TchEnvKind::Courier] {
        let mut ep = ptr::null_mut();
        assert_eq!(unsafe { tch_episode_new(kind, 3, &mut ep) }, TchStatus::Ok);
        let mut n = 0;
        assert_eq!(unsafe { tch_episode_action_count(ep, &mut n) }, TchStatus::Ok);
        assert_eq!(n, tch_action_count(kind));
        let (mut total, mut done) = (0.0, false);
        let mut steps = 0;
        while !done && steps < 200 {
            let mut a = 0;
            assert_eq!(unsafe { tch_episode_expert_action(ep, &mut a) }, TchStatus::Ok, "{}", last_error());
            let mut r = 0.0;
            assert_eq!(unsafe { tch_episode_step(ep, a, &mut r, &mut done) }, TchStatus::Ok);
            total += r;
            steps += 1;
        }
        assert!(done && total >= 1.0, "{kind:?}: reward {total} after {steps} steps");
        let mut d = false;
        unsafe { tch_episode_is_done(ep, &mut d) };
        assert!(d);
        unsafe { tch_episode_free(ep) };
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut ep = ptr::null_mut();
    assert_eq!(unsafe { tch_episode_new(TchEnvKind::Gridhome, 1, ptr::null_mut()) }, TchStatus::NullPointer);
    assert!(last_error().contains("out is null"));
    unsafe { tch_episode_new(TchEnvKind::Gridhome, 1, &mut ep) };
    assert_eq!(unsafe { tch_episode_step(ep, 99, ptr::null_mut(), ptr::null_mut()) }, TchStatus::InvalidArgument);
    assert!(last_error().contains("99"));
    let mut agent = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { tch_agent_load(missing.as_ptr(), &mut agent) }, TchStatus::Io);
    assert!(last_error().contains("/nonexistent/model.json"));
    assert!(agent.is_null());
    unsafe { tch_episode_free(ep) };
    unsafe { tch_episode_free(ptr::null_mut()) };
    unsafe { tch_agent_free(ptr::null_mut()) };
}

#[test]
fn strings_report_length_and_truncation() {
    let mut ep = ptr::null_mut();
    unsafe { tch_episode_new(TchEnvKind::Courier, 4, &mut ep) };
    let mut need = 0usize;
    assert_eq!(unsafe { tch_episode_task_text(ep, ptr::null_mut(), 0, &mut need) }, TchStatus::Ok);
    assert!(need > 0);
    let mut small = vec![0 as c_char; 4];
    assert_eq!(unsafe { tch_episode_task_text(ep, small.as_mut_ptr(), small.len(), &mut need) }, TchStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; need + 1];
    assert_eq!(unsafe { tch_episode_task_text(ep, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, TchStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(text.len(), need);
    let fb = CString::new("Turn back.").unwrap();
    assert_eq!(unsafe { tch_episode_set_feedback(ep, fb.as_ptr()) }, TchStatus::Ok);
    let mut name = vec![0 as c_char; 16];
    assert_eq!(unsafe { tch_episode_action_name(ep, 0, name.as_mut_ptr(), name.len(), ptr::null_mut()) }, TchStatus::Ok);
    assert!(!unsafe { CStr::from_ptr(name.as_ptr()) }.to_bytes().is_empty());
    unsafe { tch_episode_free(ep) };
    let v = unsafe { CStr::from_ptr(tch_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn embedding_and_metric_match_the_library() {
    let text = CString::new("Pedal to open the recycling bin.").unwrap();
    let mut v = vec![0.0; 32];
    assert_eq!(unsafe { tch_embed(text.as_ptr(), 32, v.as_mut_ptr()) }, TchStatus::Ok);
    assert_eq!(v, teachable::embed::Embedder::hashed(32).embed("Pedal to open the recycling bin."));
    let mut r = 0.0;
    assert_eq!(unsafe { tch_path_weighted_reward(1.0, 20, 10, &mut r) }, TchStatus::Ok);
    assert_eq!(r, 0.5);
    assert_eq!(unsafe { tch_path_weighted_reward(1.0, 0, 10, &mut r) }, TchStatus::InvalidArgument);
}

#[test]
fn trained_checkpoint_acts_through_the_handle() {
    use teachable::env::{EnvConfig, EnvKind};
    use teachable::model::{Checkpoint, CheckpointMeta, FeatureSpec, Model, Preset};
    let env = EnvConfig::default_for(EnvKind::GridHome);
    let model = Model::new(Preset::Desk.model_config(&env, 16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    Checkpoint::new(&model, FeatureSpec::for_env(&env), 16, CheckpointMeta::default()).save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut agent = ptr::null_mut();
    assert_eq!(unsafe { tch_agent_load(c.as_ptr(), &mut agent) }, TchStatus::Ok, "{}", last_error());
    let mut ep = ptr::null_mut();
    unsafe { tch_episode_new(TchEnvKind::Gridhome, 5, &mut ep) };
    let mut a = usize::MAX;
    assert_eq!(unsafe { tch_agent_act(agent, ep, &mut a) }, TchStatus::Ok, "{}", last_error());
    assert!(a < tch_action_count(TchEnvKind::Gridhome));
    // A gridhome agent refuses a courier episode.
    let mut other = ptr::null_mut();
    unsafe { tch_episode_new(TchEnvKind::Courier, 5, &mut other) };
    assert_eq!(unsafe { tch_agent_act(agent, other, &mut a) }, TchStatus::Policy);
    unsafe {
        tch_episode_free(ep);
        tch_episode_free(other);
        tch_agent_free(agent);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/teachable.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct TchEpisode TchEpisode;"));
    assert!(header.contains("TCH_STATUS_OK = 0"));
}

/// Compiles and runs a small C program against the header and static
/// library when a C compiler is available.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; C link check not run");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libteachable_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "teachable.h"
int main(void) {
    TchEpisode *ep = NULL;
    if (tch_episode_new(TCH_ENV_KIND_GRIDHOME, 3, &ep) != TCH_STATUS_OK) return 2;
    bool done = false;
    double total = 0.0;
    for (int i = 0; i < 200 && !done; i++) {
        uintptr_t a = 0;
        double r = 0.0;
        if (tch_episode_expert_action(ep, &a) != TCH_STATUS_OK) return 3;
        if (tch_episode_step(ep, a, &r, &done) != TCH_STATUS_OK) return 4;
        total += r;
    }
    tch_episode_free(ep);
    if (tch_episode_step(NULL, 0, NULL, NULL) != TCH_STATUS_NULL_POINTER) return 5;
    printf("%s %.1f\n", tch_version(), total);
    return total >= 1.0 ? 0 : 1;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().map(|o| o.status.success()).unwrap_or(false) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
