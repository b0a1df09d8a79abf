//! C interface to the `dred` simulator and gain verifier.
//!
//! Objects are opaque handles created by `dred_*_new`/`dred_run` and released
//! with the matching `*_free`. Every fallible call returns a [`DredStatus`];
//! on failure a message is stored per thread and can be read with
//! [`dred_last_error_message`]. Strings returned through `char **` out
//! parameters are owned by the caller and released with [`dred_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dred::analysis::{self, VerifyOptions};
use dred::config::{resolve_json, Resolved};
use dred::simulator::{self, TrajectoryLog};
use dred::Error;

/// Result codes. Values match the exit codes of the `dred` command line tool
/// where both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DredStatus {
    Ok = 0,
    Failure = 1,
    Config = 2,
    Validation = 3,
    BlowUp = 4,
    Hypothesis = 5,
    NullArgument = 10,
    InvalidUtf8 = 11,
    OutOfRange = 12,
    BufferTooSmall = 13,
    NoStates = 14,
    Panic = 99,
}

/// A parsed and validated scenario.
pub struct DredScenario {
    resolved: Resolved,
}

/// The result of one simulation run.
pub struct DredTrajectory {
    log: TrajectoryLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DredStatus, msg: impl Into<String>) -> DredStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DredStatus {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Shape(_) => DredStatus::Config,
        Error::Validation(_) => DredStatus::Validation,
        Error::BlowUp { .. } => DredStatus::BlowUp,
        Error::Hypothesis(_) => DredStatus::Hypothesis,
        Error::NotSpd { .. } | Error::NoConvergence(_) | Error::Io(_) => DredStatus::Failure,
    }
}

fn from_error(e: Error) -> DredStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, converting panics to [`DredStatus::Panic`] and clearing the
/// stored message on success.
fn guard(f: impl FnOnce() -> DredStatus) -> DredStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(DredStatus::Ok) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DredStatus::Ok
        }
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DredStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, DredStatus> {
    p.as_ref().ok_or_else(|| fail(DredStatus::NullArgument, "null handle"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> DredStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            DredStatus::Ok
        }
        Err(_) => fail(DredStatus::Failure, "string contains an interior nul byte"),
    }
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> DredStatus {
    if buf.is_null() {
        return fail(DredStatus::NullArgument, "null buffer");
    }
    if len < src.len() {
        return fail(
            DredStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    DredStatus::Ok
}

/// Copies the message of the last failed call on this thread into `buf`
/// (nul-terminated, truncated to `len - 1` bytes). Returns the full message
/// length in bytes, excluding the terminator, or 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dred_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dred_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned through a `char **` out parameter
/// of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dred_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a scenario from its JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dred_scenario_new(json: *const c_char, out: *mut *mut DredScenario) -> DredStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(DredStatus::NullArgument, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(DredStatus::InvalidUtf8, "scenario text is not valid UTF-8");
        };
        match resolve_json(text) {
            Ok(resolved) => {
                *out = Box::into_raw(Box::new(DredScenario { resolved }));
                DredStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must be null or a live handle from [`dred_scenario_new`].
#[no_mangle]
pub unsafe extern "C" fn dred_scenario_free(scenario: *mut DredScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of agents in the scenario's network, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dred_scenario_agents(scenario: *const DredScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.resolved.scenario.network.n_agents())
}

/// Differentiation order `m` of the scenario, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dred_scenario_order(scenario: *const DredScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.resolved.scenario.m)
}

/// Checks the scenario's gains and writes the report as JSON to `out`.
/// A report whose conditions fail is still returned with [`DredStatus::Ok`];
/// inspect its `passed` field.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dred_verify_gains_json(
    scenario: *const DredScenario,
    samples: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> DredStatus {
    guard(|| {
        let s = match handle(scenario) {
            Ok(s) => s,
            Err(st) => return st,
        };
        if out.is_null() {
            return fail(DredStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let opts = VerifyOptions {
            samples,
            seed,
            ..VerifyOptions::default()
        };
        let r = &s.resolved;
        let report = match analysis::verify_gains(&r.spectra, &r.scenario.gains, r.declared_tilde.as_deref(), &opts) {
            Ok(rep) => rep,
            Err(e) => return from_error(e),
        };
        match serde_json::to_string(&report) {
            Ok(text) => write_string(out, text),
            Err(e) => fail(DredStatus::Failure, e.to_string()),
        }
    })
}

/// Simulates the scenario and returns the full trajectory.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dred_run(scenario: *const DredScenario, out: *mut *mut DredTrajectory) -> DredStatus {
    guard(|| {
        let s = match handle(scenario) {
            Ok(s) => s,
            Err(st) => return st,
        };
        if out.is_null() {
            return fail(DredStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        match simulator::run(&s.resolved.scenario) {
            Ok(log) => {
                *out = Box::into_raw(Box::new(DredTrajectory { log }));
                DredStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a trajectory. Null is ignored.
///
/// # Safety
/// `traj` must be null or a live handle from [`dred_run`].
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_free(traj: *mut DredTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of samples (`steps + 1`), or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_len(traj: *const DredTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.log.len())
}

/// Copies the sample times into `buf`, which must hold
/// [`dred_trajectory_len`] values.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_times(traj: *const DredTrajectory, buf: *mut f64, len: usize) -> DredStatus {
    guard(|| match handle(traj) {
        Ok(t) => copy_out(t.log.times(), buf, len),
        Err(st) => st,
    })
}

/// Copies the worst-agent error of order `mu` at every sample into `buf`,
/// which must hold [`dred_trajectory_len`] values.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_errors(
    traj: *const DredTrajectory,
    mu: usize,
    buf: *mut f64,
    len: usize,
) -> DredStatus {
    guard(|| {
        let t = match handle(traj) {
            Ok(t) => t,
            Err(st) => return st,
        };
        if mu > t.log.order() {
            return fail(
                DredStatus::OutOfRange,
                format!("order {mu} exceeds m = {}", t.log.order()),
            );
        }
        copy_out(&t.log.error_series(mu), buf, len)
    })
}

/// Copies the leader reference (derivatives `0..=m`) at sample `k` into
/// `buf`, which must hold `m + 1` values.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_reference(
    traj: *const DredTrajectory,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> DredStatus {
    guard(|| {
        let t = match handle(traj) {
            Ok(t) => t,
            Err(st) => return st,
        };
        if k >= t.log.len() {
            return fail(DredStatus::OutOfRange, format!("sample {k} out of {}", t.log.len()));
        }
        copy_out(t.log.refs(k), buf, len)
    })
}

/// Copies all agent states at sample `k` into `buf`, agent-major:
/// `buf[i * (m + 1) + mu]`. `buf` must hold `n_agents * (m + 1)` values.
///
/// # Safety
/// `traj` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_state(
    traj: *const DredTrajectory,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> DredStatus {
    guard(|| {
        let t = match handle(traj) {
            Ok(t) => t,
            Err(st) => return st,
        };
        if k >= t.log.len() {
            return fail(DredStatus::OutOfRange, format!("sample {k} out of {}", t.log.len()));
        }
        match t.log.state(k) {
            Some(x) => copy_out(x.as_slice(), buf, len),
            None => fail(DredStatus::NoStates, "trajectory was recorded without states"),
        }
    })
}

/// Writes the run metadata and default metrics (steady-state error and
/// convergence times per order) as JSON to `out`.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dred_trajectory_metrics_json(
    traj: *const DredTrajectory,
    out: *mut *mut c_char,
) -> DredStatus {
    guard(|| {
        let t = match handle(traj) {
            Ok(t) => t,
            Err(st) => return st,
        };
        if out.is_null() {
            return fail(DredStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let metrics = match simulator::default_metrics(&t.log) {
            Ok(m) => m,
            Err(e) => return from_error(e),
        };
        let value = serde_json::json!({ "metrics": metrics, "metadata": t.log.metadata });
        write_string(out, value.to_string())
    })
}
