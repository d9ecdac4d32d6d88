//! C ABI over `sqdp-core`.
//!
//! Instances and reports are opaque handles released with their `_free`
//! function. Every call returns an [`SqdpStatus`]; on failure the message is
//! available from [`sqdp_last_error`] on the same thread. Strings handed out
//! by the library are released with [`sqdp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sqdp_core::bench::{generate_instance, BenchmarkParams};
use sqdp_core::io::{instance_from_str, instance_to_string, objective_from_str, to_json_string};
use sqdp_core::model::{MspInstance, Vector};
use sqdp_core::oracle::{solve_extensive, subtree_value};
use sqdp_core::qcsc::{
    complexity_bound, default_max_iter, run_algorithm, Algorithm, PiecewiseQuadratic, RunStatus,
};
use sqdp_core::sqdp::{run, RunReport, SolverConfig, TerminationStatus};
use sqdp_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    Infeasible = 4,
    Unbounded = 5,
    NonConvergence = 6,
    BudgetExceeded = 7,
    IterationLimit = 8,
    Unsupported = 9,
    Io = 10,
    Internal = 11,
    Panic = 12,
}

pub const SQDP_ALG_KELLEY: c_int = 0;
pub const SQDP_ALG_QCSC: c_int = 1;
pub const SQDP_ALG_QCSC_REFORM: c_int = 2;

/// A multistage instance.
pub struct SqdpInstance {
    inner: MspInstance,
}

/// The result of a decomposition run.
pub struct SqdpReport {
    inner: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SqdpStatus {
    match err.root() {
        Error::Dimension(_) => SqdpStatus::Dimension,
        Error::InvalidInput(_) | Error::Json(_) | Error::Csv(_) => SqdpStatus::InvalidInput,
        Error::Infeasible(_) => SqdpStatus::Infeasible,
        Error::Unbounded(_) => SqdpStatus::Unbounded,
        Error::NonConvergence { .. } => SqdpStatus::NonConvergence,
        Error::BudgetExceeded { .. } => SqdpStatus::BudgetExceeded,
        Error::Unsupported(_) => SqdpStatus::Unsupported,
        Error::Io(_) => SqdpStatus::Io,
        _ => SqdpStatus::Internal,
    }
}

struct Failure(SqdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SqdpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any failure or panic for `sqdp_last_error`.
fn guard<F: FnOnce() -> Result<SqdpStatus, Failure>>(f: F) -> SqdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Failure(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SqdpStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(SqdpStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) {
    if !out.is_null() {
        out.write(value);
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sqdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sqdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sqdp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Draws a random benchmark instance.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_generate(
    stages: usize,
    n: usize,
    realizations: usize,
    lambda0: f64,
    seed: u64,
    out: *mut *mut SqdpInstance,
) -> SqdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = generate_instance(&BenchmarkParams::new(
            stages,
            n,
            realizations,
            lambda0,
            seed,
        ))?;
        *out = Box::into_raw(Box::new(SqdpInstance { inner }));
        Ok(SqdpStatus::Ok)
    })
}

/// Parses an instance document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_from_json(
    json: *const c_char,
    out: *mut *mut SqdpInstance,
) -> SqdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = instance_from_str(read_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(SqdpInstance { inner }));
        Ok(SqdpStatus::Ok)
    })
}

/// Serializes an instance; free the result with `sqdp_string_free`.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_to_json(
    inst: *const SqdpInstance,
    out: *mut *mut c_char,
) -> SqdpStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(instance_to_string(&inst.inner)?);
        Ok(SqdpStatus::Ok)
    })
}

/// Number of stages, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_num_stages(inst: *const SqdpInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.inner.num_stages())
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_dim(inst: *const SqdpInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.inner.n())
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqdp_instance_free(inst: *mut SqdpInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Runs the decomposition. `config_json` is a solver configuration object
/// and may be null for the defaults. A run that stops at the iteration cap
/// still produces a report and returns `IterationLimit`.
///
/// # Safety
/// `inst` must be a live handle, `config_json` null or NUL-terminated, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_solve(
    inst: *const SqdpInstance,
    config_json: *const c_char,
    out: *mut *mut SqdpReport,
) -> SqdpStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config: SolverConfig = if config_json.is_null() {
            SolverConfig::default()
        } else {
            serde_json::from_str(read_str(config_json, "config_json")?).map_err(Error::from)?
        };
        let inner = run(&inst.inner, &config)?;
        let status = match inner.status {
            TerminationStatus::Converged => SqdpStatus::Ok,
            TerminationStatus::IterationLimit => SqdpStatus::IterationLimit,
        };
        *out = Box::into_raw(Box::new(SqdpReport { inner }));
        Ok(status)
    })
}

/// Final bounds of a report. `ub` is NaN when no upper bound was formed.
/// Any output pointer may be null.
///
/// # Safety
/// `report` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sqdp_report_bounds(
    report: *const SqdpReport,
    lb: *mut f64,
    ub: *mut f64,
    iterations: *mut usize,
    converged: *mut c_int,
) -> SqdpStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.inner;
        write_out(lb, r.lb);
        write_out(ub, r.ub.unwrap_or(f64::NAN));
        write_out(iterations, r.iterations);
        write_out(
            converged,
            c_int::from(r.status == TerminationStatus::Converged),
        );
        Ok(SqdpStatus::Ok)
    })
}

/// Full report as JSON; free the result with `sqdp_string_free`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_report_to_json(
    report: *const SqdpReport,
    out: *mut *mut c_char,
) -> SqdpStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(to_json_string(r)?);
        Ok(SqdpStatus::Ok)
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqdp_report_free(report: *mut SqdpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Optimal value of the full scenario tree. `root_decision`, when not null,
/// receives the `n` stage-1 decisions.
///
/// # Safety
/// `inst` must be a live handle, `value` valid, `root_decision` null or
/// writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqdp_extensive_value(
    inst: *const SqdpInstance,
    node_budget: usize,
    value: *mut f64,
    root_decision: *mut f64,
) -> SqdpStatus {
    guard(|| {
        let inst = &inst.as_ref().ok_or_else(|| null("inst"))?.inner;
        if value.is_null() {
            return Err(null("value"));
        }
        let sol = solve_extensive(inst, 1, inst.x0(), node_budget)?;
        *value = sol.value;
        if !root_decision.is_null() {
            let x = sol.root_decision();
            ptr::copy_nonoverlapping(x.as_ptr(), root_decision, x.len());
        }
        Ok(SqdpStatus::Ok)
    })
}

/// Cost-to-go of stages `t..=T` from state `x` (length `n`); 0 for `t = T+1`.
///
/// # Safety
/// `inst` must be a live handle, `x` readable for `n` doubles and `value`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn sqdp_subtree_value(
    inst: *const SqdpInstance,
    t: usize,
    x: *const f64,
    n: usize,
    node_budget: usize,
    value: *mut f64,
) -> SqdpStatus {
    guard(|| {
        let inst = &inst.as_ref().ok_or_else(|| null("inst"))?.inner;
        if value.is_null() {
            return Err(null("value"));
        }
        let x = Vector::from_column_slice(read_slice(x, n, "x")?);
        *value = subtree_value(inst, t, &x, node_budget)?;
        Ok(SqdpStatus::Ok)
    })
}

/// Minimizes a piecewise-quadratic objective. `objective_json` selects the
/// built-in one-dimensional example when null. `max_iter` 0 picks the
/// default cap. `best_point` receives `n` doubles. Hitting the cap fills the
/// outputs and returns `IterationLimit`.
///
/// # Safety
/// Pointers must be valid for the lengths given; `objective_json` null or
/// NUL-terminated.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sqdp_qcsc_run(
    objective_json: *const c_char,
    x0: *const f64,
    n: usize,
    eps: f64,
    algorithm: c_int,
    max_iter: usize,
    best_value: *mut f64,
    best_point: *mut f64,
    iterations: *mut usize,
) -> SqdpStatus {
    guard(|| {
        let objective = if objective_json.is_null() {
            PiecewiseQuadratic::kinked_1d()
        } else {
            objective_from_str(read_str(objective_json, "objective_json")?)?
        };
        let algorithm = match algorithm {
            SQDP_ALG_KELLEY => Algorithm::Kelley,
            SQDP_ALG_QCSC => Algorithm::Qcsc,
            SQDP_ALG_QCSC_REFORM => Algorithm::QcscReform,
            other => {
                return Err(Failure(
                    SqdpStatus::InvalidInput,
                    format!("unknown algorithm code {other}"),
                ))
            }
        };
        let x0 = Vector::from_column_slice(read_slice(x0, n, "x0")?);
        let cap = if max_iter == 0 {
            default_max_iter(&objective, eps)
        } else {
            max_iter
        };
        let r = run_algorithm(algorithm, &objective, &x0, eps, cap)?;
        write_out(best_value, r.best_value);
        write_out(iterations, r.iterations());
        if !best_point.is_null() {
            ptr::copy_nonoverlapping(r.best_point.as_ptr(), best_point, r.best_point.len());
        }
        Ok(match r.status {
            RunStatus::Converged => SqdpStatus::Ok,
            RunStatus::IterationLimit => SqdpStatus::IterationLimit,
        })
    })
}

/// Worst-case QCSC iteration count for the given constants.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sqdp_complexity_bound(
    m: f64,
    l: f64,
    mu: f64,
    d: f64,
    eps: f64,
    out: *mut u64,
) -> SqdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = complexity_bound(m, l, mu, d, eps)?;
        Ok(SqdpStatus::Ok)
    })
}
