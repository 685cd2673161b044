//! C interface to the `rdaudit` simulator and audit suite.
//!
//! Handles are opaque and owned by the caller: experiments from
//! `rd_experiment_from_toml`/`rd_experiment_load` go back through
//! `rd_experiment_free`, runs through `rd_run_free`. Functions return an [`RdStatus`]; on failure the
//! message is available from [`rd_last_error`] on the same thread. Strings
//! returned as `char *` are released with [`rd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rdaudit::audit::AuditStatus;
use rdaudit::cli::{self, diagnostics_csv, Experiment, ExperimentConfig, RunReport};
use rdaudit::elliptic::hminus1_norm;
use rdaudit::grid::{Boundary, Field, Grid};
use rdaudit::integrate::Trajectory;
use rdaudit::Error;

/// Status codes. Values 3 to 5 match the exit codes of the `rdaudit` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    BlowUp = 3,
    NumericalFailure = 4,
    InvalidConfig = 5,
    NullPointer = 6,
    Io = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdAuditStatus {
    Pass = 0,
    Fail = 1,
    Inapplicable = 2,
    Info = 3,
}

/// One audit line. `name` is borrowed from the run and lives as long as it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RdAuditRow {
    pub name: *const c_char,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tol: f64,
    pub status: RdAuditStatus,
}

/// A validated experiment configuration.
pub struct RdExperiment {
    inner: Experiment,
}

/// A finished run: trajectory snapshots plus the audit report.
pub struct RdRun {
    traj: Trajectory,
    report: RunReport,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: RdStatus, msg: impl Into<String>) -> RdStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> RdStatus {
    match err {
        Error::BlowUp { .. } => RdStatus::BlowUp,
        Error::NumericalFailure { .. } | Error::StepCollapse { .. } | Error::StepLimit { .. } => {
            RdStatus::NumericalFailure
        }
        Error::InvalidConfig(_) | Error::InvalidInput(_) => RdStatus::InvalidConfig,
        Error::Io(_) => RdStatus::Io,
    }
}

fn from_error(err: Error) -> RdStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

/// Runs `f`, turning a panic into [`RdStatus::Panic`].
fn guard(f: impl FnOnce() -> RdStatus) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RdStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, RdStatus> {
    if p.is_null() {
        return Err(fail(RdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(RdStatus::InvalidConfig, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a TOML config. Relative paths inside it resolve
/// against `base_dir` (NULL for the current directory).
///
/// # Safety
/// `text` and `base_dir` (if not NULL) must be NUL-terminated strings and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_from_toml(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut RdExperiment,
) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RdStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            "."
        } else {
            match str_arg(base_dir, "base_dir") {
                Ok(b) => b,
                Err(s) => return s,
            }
        };
        match ExperimentConfig::from_toml(text).and_then(|c| Experiment::from_config(c, Path::new(base))) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RdExperiment { inner }));
                RdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads a config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_load(path: *const c_char, out: *mut *mut RdExperiment) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RdStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Experiment::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RdExperiment { inner }));
                RdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `exp` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_free(exp: *mut RdExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of species, or 0 for NULL.
///
/// # Safety
/// `exp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_species(exp: *const RdExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.inner.spec.m())
}

/// Number of grid cells, or 0 for NULL.
///
/// # Safety
/// `exp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_cells(exp: *const RdExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.inner.initial.grid().cell_count())
}

/// Effective config with every default filled in (free with
/// [`rd_string_free`]); NULL for a NULL handle.
///
/// # Safety
/// `exp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_config(exp: *const RdExperiment) -> *mut c_char {
    match exp.as_ref() {
        Some(e) => into_c_string(e.inner.config.to_toml()),
        None => ptr::null_mut(),
    }
}

/// Runs the experiment and its audits. With a non-NULL `out_dir` the CSV,
/// report and snapshot files are written there as the binary would.
/// Failed audits still return [`RdStatus::Ok`]; see [`rd_run_passed`].
///
/// # Safety
/// `exp` must be a live handle, `out_dir` NULL or a NUL-terminated string,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_experiment_run(
    exp: *const RdExperiment,
    out_dir: *const c_char,
    out: *mut *mut RdRun,
) -> RdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RdStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(exp) = exp.as_ref() else {
            return fail(RdStatus::NullPointer, "experiment is null");
        };
        let dir = if out_dir.is_null() {
            None
        } else {
            match str_arg(out_dir, "out_dir") {
                Ok(d) => Some(d),
                Err(s) => return s,
            }
        };
        let result = cli::evaluate(&exp.inner).and_then(|(traj, report)| match dir {
            Some(d) => cli::write_outputs(&exp.inner, &traj, &report, Path::new(d)).map(|()| (traj, report)),
            None => Ok((traj, report)),
        });
        match result {
            Ok((traj, report)) => {
                let names = report.audits.iter().map(|a| CString::new(a.name.replace('\0', " ")).unwrap_or_default()).collect();
                *out = Box::into_raw(Box::new(RdRun { traj, report, names }));
                RdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `run` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rd_run_free(run: *mut RdRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// True when no audit failed.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_passed(run: *const RdRun) -> bool {
    run.as_ref().is_some_and(|r| r.report.passed())
}

/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_steps(run: *const RdRun) -> usize {
    run.as_ref().map_or(0, |r| r.report.steps)
}

/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_final_time(run: *const RdRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.traj.final_state().t)
}

/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_audit_count(run: *const RdRun) -> usize {
    run.as_ref().map_or(0, |r| r.report.audits.len())
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_run_audit(run: *const RdRun, index: usize, out: *mut RdAuditRow) -> RdStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), out.is_null()) else {
            return fail(RdStatus::NullPointer, "run or out is null");
        };
        let Some(a) = run.report.audits.get(index) else {
            return fail(RdStatus::OutOfRange, format!("audit {index} of {}", run.report.audits.len()));
        };
        *out = RdAuditRow {
            name: run.names[index].as_ptr(),
            lhs: a.lhs,
            rhs: a.rhs,
            margin: a.margin,
            tol: a.tol,
            status: match a.status {
                AuditStatus::Pass => RdAuditStatus::Pass,
                AuditStatus::Fail => RdAuditStatus::Fail,
                AuditStatus::Inapplicable => RdAuditStatus::Inapplicable,
                AuditStatus::Info => RdAuditStatus::Info,
            },
        };
        RdStatus::Ok
    })
}

/// Copies the final values of `species` into `buf`, which must hold exactly
/// one entry per cell (`len` is checked).
///
/// # Safety
/// `run` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rd_run_final_state(run: *const RdRun, species: usize, buf: *mut f64, len: usize) -> RdStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), buf.is_null()) else {
            return fail(RdStatus::NullPointer, "run or buf is null");
        };
        let state = run.traj.final_state();
        let Some(f) = state.species().get(species) else {
            return fail(RdStatus::OutOfRange, format!("species {species} of {}", state.len()));
        };
        if f.values().len() != len {
            return fail(RdStatus::OutOfRange, format!("buffer holds {len} values, grid has {}", f.values().len()));
        }
        ptr::copy_nonoverlapping(f.values().as_ptr(), buf, len);
        RdStatus::Ok
    })
}

/// Rendered report text (free with [`rd_string_free`]).
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_report(run: *const RdRun) -> *mut c_char {
    run.as_ref().map_or(ptr::null_mut(), |r| into_c_string(r.report.render()))
}

/// Diagnostics CSV of the stored snapshots (free with [`rd_string_free`]).
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rd_run_csv(run: *const RdRun) -> *mut c_char {
    run.as_ref().map_or(ptr::null_mut(), |r| into_c_string(diagnostics_csv(&r.traj)))
}

/// Discrete `H⁻¹` norm of cell values on a uniform 1D Neumann grid of the
/// given length.
///
/// # Safety
/// `values` must be valid for `cells` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_hminus1_norm_1d(values: *const f64, cells: usize, length: f64, out: *mut f64) -> RdStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return fail(RdStatus::NullPointer, "values or out is null");
        }
        let v = std::slice::from_raw_parts(values, cells).to_vec();
        let norm = Grid::uniform_1d(length, cells, Boundary::Neumann)
            .and_then(|g| Field::new(g, v))
            .and_then(|f| hminus1_norm(&f));
        match norm {
            Ok(n) => {
                *out = n;
                RdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
