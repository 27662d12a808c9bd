//! C ABI over `cobot-core`.
//!
//! Every entry point returns a [`CobotStatus`]; on failure the message is
//! available from [`cobot_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cobot_core::config::ScenarioConfig;
use cobot_core::dmp::{self, Demonstration, DmpModel, LearnParams, Overrides, ReproduceParams};
use cobot_core::runlog::Phase;
use cobot_core::sim::{SimCommand, Simulator};
use nalgebra::Vector3;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    DmpFailed = 5,
    /// Output buffer too small; the required length was written back.
    BufferTooSmall = 6,
    Panic = 99,
}

/// Pipeline phase, mirroring the run log.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobotPhase {
    Approach = 0,
    VisualServo = 1,
    Grasped = 2,
    Transfer = 3,
    Place = 4,
    Done = 5,
}

impl From<Phase> for CobotPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Approach => CobotPhase::Approach,
            Phase::VisualServo => CobotPhase::VisualServo,
            Phase::Grasped => CobotPhase::Grasped,
            Phase::Transfer => CobotPhase::Transfer,
            Phase::Place => CobotPhase::Place,
            Phase::Done => CobotPhase::Done,
        }
    }
}

/// Opaque simulator handle.
pub struct CobotSimulator {
    inner: Simulator,
}

/// Opaque learned movement primitive.
pub struct CobotDmp {
    inner: DmpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(CobotStatus, String);

fn fail<T>(status: CobotStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CobotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CobotStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CobotStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(CobotStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CobotStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(CobotStatus::NullPointer, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(CobotStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(CobotStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cobot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Version of the WebSocket protocol spoken by `cobot serve`.
#[no_mangle]
pub extern "C" fn cobot_protocol_version() -> u32 {
    cobot_core::protocol::PROTOCOL_VERSION
}

/// Builds a simulator from a scenario TOML document. `base_dir` resolves
/// relative paths in the document and may be null for the current directory.
///
/// # Safety
/// `toml` and `base_dir` must be null or NUL-terminated strings; `out` must be
/// null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_new(
    toml: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut CobotSimulator,
) -> CobotStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let config = ScenarioConfig::from_toml_str(text).map_err(|e| Failure(CobotStatus::InvalidConfig, e.to_string()))?;
        let scenario =
            config.to_scenario(Path::new(base)).map_err(|e| Failure(CobotStatus::InvalidConfig, e.to_string()))?;
        let inner = Simulator::new(scenario).map_err(|e| Failure(CobotStatus::InvalidConfig, e.to_string()))?;
        *out = Box::into_raw(Box::new(CobotSimulator { inner }));
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from [`cobot_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_free(sim: *mut CobotSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances up to `n_steps` steps, stopping early when the run finishes.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_step(sim: *mut CobotSimulator, n_steps: u64) -> CobotStatus {
    guard(|| {
        let sim = &mut mut_arg(sim, "sim")?.inner;
        for _ in 0..n_steps {
            if sim.is_finished() {
                break;
            }
            sim.step();
        }
        Ok(())
    })
}

/// Runs to completion and writes the outcome as a CLI exit code:
/// 0 done, 1 failed, 2 timeout, 3 singular.
///
/// # Safety
/// `sim` must be a live handle; `exit_code` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_run(sim: *mut CobotSimulator, exit_code: *mut i32) -> CobotStatus {
    guard(|| {
        let exit_code = mut_arg(exit_code, "exit_code")?;
        let sim = &mut mut_arg(sim, "sim")?.inner;
        sim.run_until(|_| false);
        *exit_code = sim.outcome().map_or(1, |o| o.exit_code());
        Ok(())
    })
}

/// Outcome exit code of a finished run, or -1 while it is still running.
///
/// # Safety
/// `sim` must be a live handle; `exit_code` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_outcome(sim: *const CobotSimulator, exit_code: *mut i32) -> CobotStatus {
    guard(|| {
        let exit_code = mut_arg(exit_code, "exit_code")?;
        *exit_code = ref_arg(sim, "sim")?.inner.outcome().map_or(-1, |o| o.exit_code());
        Ok(())
    })
}

/// Simulated time, seconds.
///
/// # Safety
/// `sim` must be a live handle; `t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_time(sim: *const CobotSimulator, t: *mut f64) -> CobotStatus {
    guard(|| {
        *mut_arg(t, "t")? = ref_arg(sim, "sim")?.inner.t();
        Ok(())
    })
}

/// # Safety
/// `sim` must be a live handle; `phase` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_phase(sim: *const CobotSimulator, phase: *mut CobotPhase) -> CobotStatus {
    guard(|| {
        *mut_arg(phase, "phase")? = ref_arg(sim, "sim")?.inner.phase().into();
        Ok(())
    })
}

/// Copies the joint configuration into `q`. `len` is the buffer length; on
/// return it holds the number of joints. Pass `q = NULL` to query the size.
///
/// # Safety
/// `sim` must be a live handle; `len` must be writable; `q` must be null or
/// hold `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_joints(sim: *const CobotSimulator, q: *mut f64, len: *mut usize) -> CobotStatus {
    guard(|| {
        let len = mut_arg(len, "len")?;
        let joints = ref_arg(sim, "sim")?.inner.q();
        let capacity = *len;
        *len = joints.len();
        if q.is_null() {
            return Ok(());
        }
        if capacity < joints.len() {
            return fail(CobotStatus::BufferTooSmall, format!("need {} doubles, got {capacity}", joints.len()));
        }
        std::slice::from_raw_parts_mut(q, joints.len()).copy_from_slice(joints);
        Ok(())
    })
}

/// Starts (`active = true`) or releases a drag of the origin of frame
/// `joint_index` at `velocity` (world frame, m/s). Applied on the next step.
///
/// # Safety
/// `sim` must be a live handle; `velocity` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn cobot_sim_drag(
    sim: *mut CobotSimulator,
    joint_index: usize,
    velocity: *const f64,
    active: bool,
) -> CobotStatus {
    guard(|| {
        let sim = &mut mut_arg(sim, "sim")?.inner;
        let v = slice_arg(velocity, 3, "velocity")?;
        let n = sim.scenario().model.n_dof();
        if joint_index > n {
            return fail(CobotStatus::InvalidArgument, format!("joint_index must be <= {n}"));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return fail(CobotStatus::InvalidArgument, "velocity must be finite");
        }
        sim.enqueue(SimCommand::Drag { joint_index, vector: Vector3::new(v[0], v[1], v[2]), active });
        Ok(())
    })
}

/// Learns a primitive from `n_samples` rows of `n_dof` joint positions
/// (row-major in `q`) sampled at times `t`, with default parameters.
///
/// # Safety
/// `t` must hold `n_samples` doubles, `q` `n_samples * n_dof`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_learn(
    t: *const f64,
    q: *const f64,
    n_samples: usize,
    n_dof: usize,
    out: *mut *mut CobotDmp,
) -> CobotStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let total = n_samples
            .checked_mul(n_dof)
            .ok_or_else(|| Failure(CobotStatus::InvalidArgument, "n_samples * n_dof overflows".into()))?;
        let t = slice_arg(t, n_samples, "t")?.to_vec();
        let q = slice_arg(q, total, "q")?;
        if n_dof == 0 {
            return fail(CobotStatus::InvalidArgument, "n_dof must be positive");
        }
        let rows = q.chunks(n_dof).map(<[f64]>::to_vec).collect();
        let demo = Demonstration::from_positions(t, rows).map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?;
        let inner = dmp::learn(&demo, &LearnParams::default()).map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(CobotDmp { inner }));
        Ok(())
    })
}

/// Loads a primitive from the JSON written by `cobot learn-dmp`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_from_json(json: *const c_char, out: *mut *mut CobotDmp) -> CobotStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner: DmpModel = serde_json::from_str(str_arg(json, "json")?)
            .map_err(|e| Failure(CobotStatus::InvalidArgument, e.to_string()))?;
        inner.validate().map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(CobotDmp { inner }));
        Ok(())
    })
}

/// Serializes a primitive to JSON. Release the string with [`cobot_string_free`].
///
/// # Safety
/// `dmp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_to_json(dmp: *const CobotDmp, out: *mut *mut c_char) -> CobotStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = serde_json::to_string(&ref_arg(dmp, "dmp")?.inner)
            .map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?;
        *out = CString::new(text).map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `dmp` must be a live handle; `n_dof` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_n_dof(dmp: *const CobotDmp, n_dof: *mut usize) -> CobotStatus {
    guard(|| {
        *mut_arg(n_dof, "n_dof")? = ref_arg(dmp, "dmp")?.inner.n_dof();
        Ok(())
    })
}

/// Integrates the primitive at step `dt` and writes positions row-major into
/// `q` (`n_samples x n_dof`). `goal` (`n_dof` doubles) may be null to keep the
/// demonstrated goal; `tau <= 0` keeps the demonstrated duration.
///
/// `*n_samples` is the capacity of `q` in rows on entry and the number of rows
/// produced on return. Pass `q = NULL` to query the size.
///
/// # Safety
/// `dmp` must be a live handle; `goal` null or `n_dof` doubles; `q` null or
/// `*n_samples * n_dof` doubles; `n_samples` writable.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_reproduce(
    dmp: *const CobotDmp,
    goal: *const f64,
    tau: f64,
    dt: f64,
    q: *mut f64,
    n_samples: *mut usize,
) -> CobotStatus {
    guard(|| {
        let model = &ref_arg(dmp, "dmp")?.inner;
        let n_samples = mut_arg(n_samples, "n_samples")?;
        let n = model.n_dof();
        let goal = if goal.is_null() { None } else { Some(slice_arg(goal, n, "goal")?.to_vec()) };
        if !(dt > 0.0 && dt.is_finite()) {
            return fail(CobotStatus::InvalidArgument, "dt must be positive");
        }
        let overrides = Overrides { goal, tau: (tau > 0.0).then_some(tau), start: None };
        let params = ReproduceParams { dt, ..ReproduceParams::default() };
        let traj = dmp::reproduce(model, &overrides, &params).map_err(|e| Failure(CobotStatus::DmpFailed, e.to_string()))?;
        let capacity = *n_samples;
        *n_samples = traj.q.len();
        if q.is_null() {
            return Ok(());
        }
        if capacity < traj.q.len() {
            return fail(CobotStatus::BufferTooSmall, format!("need {} rows, got {capacity}", traj.q.len()));
        }
        let out = std::slice::from_raw_parts_mut(q, traj.q.len() * n);
        for (row, sample) in out.chunks_mut(n).zip(&traj.q) {
            row.copy_from_slice(sample);
        }
        Ok(())
    })
}

/// Releases a primitive. Null is ignored.
///
/// # Safety
/// `dmp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cobot_dmp_free(dmp: *mut CobotDmp) {
    if !dmp.is_null() {
        drop(Box::from_raw(dmp));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cobot_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
