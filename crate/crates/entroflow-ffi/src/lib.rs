//! C ABI over the run harness: create a run from a JSON configuration,
//! execute it, query summary scalars, copy fields out, and write the usual
//! artifact set to a directory.
//!
//! Conventions, uniformly: functions never unwind across the boundary (a
//! caught panic reports `EF_STATUS_PANIC`); null pointers are tolerated and
//! reported; any non-OK status leaves a message readable through
//! [`ef_last_error_message`], valid on the calling thread until the next
//! failure there. A handle may be used from one thread at a time.

// The crate-level conventions above are the safety contract for every
// function here; per-function Safety sections would repeat them verbatim.
#![allow(clippy::missing_safety_doc)]

use entroflow::flow::Termination;
use entroflow::harness::config::{self, Loaded};
use entroflow::harness::{self, HarnessError, RunOutcome};
use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

/// Outcome of a call. Anything but `Ok` leaves a message in
/// [`ef_last_error_message`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration was rejected; the message says where.
    BadConfig = 3,
    /// The coupling matrix was rejected.
    BadMatrix = 4,
    /// The query needs [`ef_run_execute`] to have completed first.
    NotExecuted = 5,
    /// An index or length argument does not fit the run.
    OutOfRange = 6,
    /// The integrator failed dynamically; partial results remain readable
    /// and [`ef_run_write_outputs`] writes a failure report.
    FlowFailed = 7,
    /// Filesystem trouble while reading a config or writing outputs.
    Io = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// A configured (and possibly executed) run. Opaque; create with
/// [`ef_run_create`] or [`ef_run_create_from_file`], release with
/// [`ef_run_free`].
pub struct EfRun {
    loaded: Loaded,
    outcome: Option<RunOutcome>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let clean = msg.as_ref().replace('\0', " ");
    let stored = CString::new(clean).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn guard<T>(fallback: T, body: impl FnOnce() -> T) -> T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic caught at the C boundary");
            fallback
        }
    }
}

unsafe fn utf8_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, EfStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(EfStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        EfStatus::InvalidUtf8
    })
}

unsafe fn run_ref<'a>(p: *const EfRun) -> Result<&'a EfRun, EfStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("run handle is null");
        EfStatus::NullArgument
    })
}

unsafe fn run_mut<'a>(p: *mut EfRun) -> Result<&'a mut EfRun, EfStatus> {
    p.as_mut().ok_or_else(|| {
        set_error("run handle is null");
        EfStatus::NullArgument
    })
}

fn executed(run: &EfRun) -> Result<&RunOutcome, EfStatus> {
    run.outcome.as_ref().ok_or_else(|| {
        set_error("run has not been executed");
        EfStatus::NotExecuted
    })
}

fn out_param<T>(p: *mut T, what: &str) -> Result<(), EfStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(EfStatus::NullArgument)
    } else {
        Ok(())
    }
}

fn create_from_loaded(loaded: Result<Loaded, config::ConfigError>) -> *mut EfRun {
    match loaded {
        Ok(loaded) => Box::into_raw(Box::new(EfRun {
            loaded,
            outcome: None,
        })),
        Err(e) => {
            set_error(format!("config error: {e}"));
            ptr::null_mut()
        }
    }
}

/// Build a run from a JSON configuration string. Returns null on rejection;
/// the reason is in [`ef_last_error_message`].
#[no_mangle]
pub unsafe extern "C" fn ef_run_create(config_json: *const c_char) -> *mut EfRun {
    guard(ptr::null_mut(), || {
        let text = match utf8_arg(config_json, "config_json") {
            Ok(t) => t,
            Err(_) => return ptr::null_mut(),
        };
        create_from_loaded(config::load_str(text))
    })
}

/// Like [`ef_run_create`], reading the configuration from a file.
#[no_mangle]
pub unsafe extern "C" fn ef_run_create_from_file(path: *const c_char) -> *mut EfRun {
    guard(ptr::null_mut(), || {
        let path = match utf8_arg(path, "path") {
            Ok(t) => t,
            Err(_) => return ptr::null_mut(),
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(format!("cannot read {path}: {e}"));
                return ptr::null_mut();
            }
        };
        create_from_loaded(config::load_str(&text))
    })
}

/// Release a handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ef_run_free(run: *mut EfRun) {
    guard((), || {
        if !run.is_null() {
            drop(Box::from_raw(run));
        }
    })
}

/// Integrate the configured flow (plus steady-state refinement and
/// certification when the run settles). Idempotent: a second call returns
/// the stored verdict without recomputing. `EF_STATUS_FLOW_FAILED` means the
/// dynamics broke down; the partial results stay queryable.
#[no_mangle]
pub unsafe extern "C" fn ef_run_execute(run: *mut EfRun) -> EfStatus {
    guard(EfStatus::Panic, || {
        let run = match run_mut(run) {
            Ok(r) => r,
            Err(s) => return s,
        };
        if run.outcome.is_none() {
            match harness::compute_run(&run.loaded) {
                Ok(out) => run.outcome = Some(out),
                Err(HarnessError::Setup(msg)) => {
                    set_error(msg);
                    return EfStatus::BadConfig;
                }
                Err(e) => {
                    set_error(e.to_string());
                    return EfStatus::Io;
                }
            }
        }
        match &run.outcome.as_ref().unwrap().failure {
            Some(f) => {
                set_error(format!("{}: {}", f.kind, f.message));
                EfStatus::FlowFailed
            }
            None => EfStatus::Ok,
        }
    })
}

/// How the run ended: 0 steady, 1 reached the configured end time, 2 hit the
/// step cap, 3 failed dynamically, -1 not executed yet.
#[no_mangle]
pub unsafe extern "C" fn ef_run_termination(run: *const EfRun) -> c_int {
    guard(-1, || {
        let run = match run_ref(run) {
            Ok(r) => r,
            Err(_) => return -1,
        };
        match &run.outcome {
            None => -1,
            Some(out) if out.failure.is_some() => 3,
            Some(out) => match out.termination {
                Some(Termination::Steady) => 0,
                Some(Termination::TEnd) => 1,
                Some(Termination::MaxSteps) => 2,
                None => 3,
            },
        }
    })
}

fn first_last_k(out: &RunOutcome, last: bool) -> Result<f64, EfStatus> {
    let row = if last {
        out.rows.last()
    } else {
        out.rows.first()
    };
    row.map(|r| r.k).ok_or_else(|| {
        set_error("the run recorded no states");
        EfStatus::OutOfRange
    })
}

/// Entropy of the initial state.
#[no_mangle]
pub unsafe extern "C" fn ef_run_entropy_initial(run: *const EfRun, out: *mut f64) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match executed(run).and_then(|o| first_last_k(o, false)) {
            Ok(k) => {
                *out = k;
                EfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Entropy of the last accepted state.
#[no_mangle]
pub unsafe extern "C" fn ef_run_entropy_final(run: *const EfRun, out: *mut f64) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match executed(run).and_then(|o| first_last_k(o, true)) {
            Ok(k) => {
                *out = k;
                EfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Number of accepted steps.
#[no_mangle]
pub unsafe extern "C" fn ef_run_accepted_steps(run: *const EfRun, out: *mut u64) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match executed(run) {
            Ok(o) => {
                *out = o.accepted_steps;
                EfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Number of rejected step candidates.
#[no_mangle]
pub unsafe extern "C" fn ef_run_rejections(run: *const EfRun, out: *mut u64) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match executed(run) {
            Ok(o) => {
                *out = o.rejections;
                EfStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Sup norm of the stationarity residual at the last accepted state.
#[no_mangle]
pub unsafe extern "C" fn ef_run_residual_linf(run: *const EfRun, out: *mut f64) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let o = match executed(run) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match o.rows.last() {
            Some(r) => {
                *out = r.residual_linf;
                EfStatus::Ok
            }
            None => {
                set_error("the run recorded no states");
                EfStatus::OutOfRange
            }
        }
    })
}

/// 1 if a steady state was certified on the native and doubled grids, 0 if
/// certification ran and failed, -1 if it was never attempted (non-steady
/// termination, failure, or not executed).
#[no_mangle]
pub unsafe extern "C" fn ef_run_certified(run: *const EfRun) -> c_int {
    guard(-1, || {
        let run = match run_ref(run) {
            Ok(r) => r,
            Err(_) => return -1,
        };
        match run.outcome.as_ref().and_then(|o| o.certificate.as_ref()) {
            Some(Ok(c)) if c.pass => 1,
            Some(_) => 0,
            None => -1,
        }
    })
}

/// Number of components in the configured system; 0 only on a null handle.
#[no_mangle]
pub unsafe extern "C" fn ef_run_component_count(run: *const EfRun) -> usize {
    guard(0, || match run_ref(run) {
        Ok(r) => r.loaded.prob.n(),
        Err(_) => 0,
    })
}

/// Number of grid points per component field; 0 only on a null handle.
/// Known from the configuration, before execution.
#[no_mangle]
pub unsafe extern "C" fn ef_run_field_len(run: *const EfRun) -> usize {
    guard(0, || match run_ref(run) {
        Ok(r) => r.loaded.prob.grid().len(),
        Err(_) => 0,
    })
}

/// Copy one component of the last accepted state into `out`, which must hold
/// exactly [`ef_run_field_len`] doubles. Values are row-major over the grid.
#[no_mangle]
pub unsafe extern "C" fn ef_run_copy_field(
    run: *const EfRun,
    component: usize,
    out: *mut f64,
    len: usize,
) -> EfStatus {
    guard(EfStatus::Panic, || {
        let (run, ()) = match (run_ref(run), out_param(out, "out")) {
            (Ok(r), Ok(())) => (r, ()),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let o = match executed(run) {
            Ok(o) => o,
            Err(s) => return s,
        };
        if component >= o.final_state.n() {
            set_error(format!(
                "component {component} out of range (system has {})",
                o.final_state.n()
            ));
            return EfStatus::OutOfRange;
        }
        let values = o.final_state.u()[component].values();
        if len != values.len() {
            set_error(format!(
                "buffer holds {len} doubles, the field has {}",
                values.len()
            ));
            return EfStatus::OutOfRange;
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
        EfStatus::Ok
    })
}

/// Write the artifact set (trajectory, snapshots, report) to a directory,
/// creating it if needed. Works for failed runs too, which write a failure
/// report and the last good state.
#[no_mangle]
pub unsafe extern "C" fn ef_run_write_outputs(run: *const EfRun, dir: *const c_char) -> EfStatus {
    guard(EfStatus::Panic, || {
        let run = match run_ref(run) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let dir = match utf8_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let o = match executed(run) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match harness::write_outputs(o, Path::new(dir)) {
            Ok(_) => EfStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                EfStatus::Io
            }
        }
    })
}

/// Gate a coupling matrix (row-major `n` by `n`) through the same checks the
/// configs use: symmetry, positive definiteness, largest eigenvalue below
/// 8 pi. On success writes the reciprocal extreme eigenvalue `lambda` and
/// the admissible exponent `beta` through the optional out pointers.
#[no_mangle]
pub unsafe extern "C" fn ef_matrix_validate(
    entries: *const f64,
    n: usize,
    out_lambda: *mut f64,
    out_beta: *mut f64,
) -> EfStatus {
    guard(EfStatus::Panic, || {
        if entries.is_null() {
            set_error("entries is null");
            return EfStatus::NullArgument;
        }
        let Some(total) = n.checked_mul(n).filter(|_| n > 0) else {
            set_error("matrix order must be at least 1 (and n*n must not overflow)");
            return EfStatus::OutOfRange;
        };
        let slice = std::slice::from_raw_parts(entries, total);
        let m = nalgebra::DMatrix::from_row_slice(n, n, slice);
        match entroflow::coeffs::validate(&m) {
            Ok(matrix) => {
                if !out_lambda.is_null() {
                    *out_lambda = matrix.lambda();
                }
                if !out_beta.is_null() {
                    *out_beta = matrix.beta();
                }
                EfStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                EfStatus::BadMatrix
            }
        }
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ef_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread; empty when
/// nothing failed yet. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ef_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}
