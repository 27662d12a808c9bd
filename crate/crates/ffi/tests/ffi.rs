use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cobot_core::config::ScenarioConfig;
use cobot_core::dmp::minimum_jerk_demo;
use cobot_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cobot_last_error()) }.to_string_lossy().into_owned()
}

fn default_toml() -> CString {
    let mut cfg = ScenarioConfig::default();
    cfg.max_time = Some(0.5);
    CString::new(cfg.to_toml_string()).unwrap()
}

#[test]
fn simulator_lifecycle() {
    let toml = default_toml();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(cobot_sim_new(toml.as_ptr(), ptr::null(), &mut sim), CobotStatus::Ok);
        assert!(!sim.is_null());

        let mut len = 0usize;
        assert_eq!(cobot_sim_joints(sim, ptr::null_mut(), &mut len), CobotStatus::Ok);
        assert_eq!(len, 7);
        let mut q0 = vec![0.0; len];
        assert_eq!(cobot_sim_joints(sim, q0.as_mut_ptr(), &mut len), CobotStatus::Ok);
        assert_eq!(q0, ScenarioConfig::default().robot.q_init);
        let mut short = [0.0; 3];
        let mut small = 3usize;
        assert_eq!(cobot_sim_joints(sim, short.as_mut_ptr(), &mut small), CobotStatus::BufferTooSmall);
        assert_eq!(small, 7);

        let mut code = 0;
        assert_eq!(cobot_sim_outcome(sim, &mut code), CobotStatus::Ok);
        assert_eq!(code, -1);

        assert_eq!(cobot_sim_step(sim, 10), CobotStatus::Ok);
        let mut t = 0.0;
        assert_eq!(cobot_sim_time(sim, &mut t), CobotStatus::Ok);
        assert!((t - 0.01).abs() < 1e-12);
        let mut phase = CobotPhase::Done;
        assert_eq!(cobot_sim_phase(sim, &mut phase), CobotStatus::Ok);
        assert_eq!(phase, CobotPhase::Approach);

        let v = [0.0, 0.1, 0.0];
        assert_eq!(cobot_sim_drag(sim, 3, v.as_ptr(), true), CobotStatus::Ok);
        assert_eq!(cobot_sim_drag(sim, 99, v.as_ptr(), true), CobotStatus::InvalidArgument);
        assert!(last_error().contains("joint_index"));

        assert_eq!(cobot_sim_run(sim, &mut code), CobotStatus::Ok);
        assert_eq!(code, 0);
        assert_eq!(cobot_sim_time(sim, &mut t), CobotStatus::Ok);
        assert!((t - 0.5).abs() < 1e-9);
        assert_eq!(last_error(), "");
        cobot_sim_free(sim);
        cobot_sim_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_codes() {
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(cobot_sim_new(ptr::null(), ptr::null(), &mut sim), CobotStatus::NullPointer);
        assert!(sim.is_null());

        let bad = CString::new("dt = 0.001\nbogus = 1\n").unwrap();
        assert_eq!(cobot_sim_new(bad.as_ptr(), ptr::null(), &mut sim), CobotStatus::InvalidConfig);
        assert!(last_error().contains("bogus"), "{}", last_error());

        let mut cfg = ScenarioConfig::default();
        cfg.controller.c_d = -1.0;
        let text = CString::new(cfg.to_toml_string()).unwrap();
        assert_eq!(cobot_sim_new(text.as_ptr(), ptr::null(), &mut sim), CobotStatus::InvalidConfig);
        assert!(last_error().contains("c_d"), "{}", last_error());

        let not_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(cobot_sim_new(not_utf8.as_ptr().cast(), ptr::null(), &mut sim), CobotStatus::InvalidUtf8);

        let mut t = 0.0;
        assert_eq!(cobot_sim_time(ptr::null(), &mut t), CobotStatus::NullPointer);
        assert_eq!(cobot_sim_step(ptr::null_mut(), 1), CobotStatus::NullPointer);
    }
}

#[test]
fn dmp_learn_reproduce_and_roundtrip() {
    let demo = minimum_jerk_demo(&[0.2, -0.5], &[1.1, 0.4], 2.0, 1e-3);
    let q: Vec<f64> = demo.q.iter().flatten().copied().collect();
    let mut dmp = ptr::null_mut();
    unsafe {
        assert_eq!(cobot_dmp_learn(demo.t.as_ptr(), q.as_ptr(), demo.t.len(), 2, &mut dmp), CobotStatus::Ok);
        let mut n_dof = 0;
        assert_eq!(cobot_dmp_n_dof(dmp, &mut n_dof), CobotStatus::Ok);
        assert_eq!(n_dof, 2);

        let goal = [-0.3, 0.9];
        let mut rows = 0usize;
        assert_eq!(cobot_dmp_reproduce(dmp, goal.as_ptr(), 0.0, 1e-3, ptr::null_mut(), &mut rows), CobotStatus::Ok);
        assert!(rows > 1000);
        let mut out = vec![0.0; rows * 2];
        assert_eq!(cobot_dmp_reproduce(dmp, goal.as_ptr(), 0.0, 1e-3, out.as_mut_ptr(), &mut rows), CobotStatus::Ok);
        let end = &out[out.len() - 2..];
        assert!((end[0] + 0.3).abs() < 1e-3 && (end[1] - 0.9).abs() < 2e-3, "{end:?}");
        assert!((out[0] - 0.2).abs() < 1e-12 && (out[1] + 0.5).abs() < 1e-12);

        let mut json = ptr::null_mut();
        assert_eq!(cobot_dmp_to_json(dmp, &mut json), CobotStatus::Ok);
        let mut copy = ptr::null_mut();
        assert_eq!(cobot_dmp_from_json(json, &mut copy), CobotStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(cobot_dmp_to_json(copy, &mut again), CobotStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(again));
        cobot_string_free(json);
        cobot_string_free(again);
        cobot_dmp_free(copy);

        assert_eq!(cobot_dmp_reproduce(dmp, ptr::null(), 0.0, -1.0, ptr::null_mut(), &mut rows), CobotStatus::InvalidArgument);
        cobot_dmp_free(dmp);

        let t = [0.0];
        let q = [0.5];
        assert_eq!(cobot_dmp_learn(t.as_ptr(), q.as_ptr(), 1, 1, &mut dmp), CobotStatus::DmpFailed);
        assert!(dmp.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn protocol_version_matches_core() {
    assert_eq!(cobot_protocol_version(), cobot_core::protocol::PROTOCOL_VERSION);
}

/// The generated header compiles as C and declares every entry point.
#[test]
fn header_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/cobot.h")).unwrap();
    for name in [
        "cobot_last_error",
        "cobot_sim_new",
        "cobot_sim_free",
        "cobot_sim_step",
        "cobot_sim_run",
        "cobot_sim_joints",
        "cobot_sim_drag",
        "cobot_dmp_learn",
        "cobot_dmp_reproduce",
        "cobot_dmp_free",
        "cobot_string_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing");
    }
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    assert!(cc.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cobot.h\"\nint main(void) {\n  CobotSimulator *sim = 0;\n  CobotStatus s = cobot_sim_new(\"\", 0, &sim);\n  \
         cobot_sim_free(sim);\n  return s == COBOT_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
