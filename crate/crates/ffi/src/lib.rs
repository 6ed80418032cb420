//! C ABI over `ippgd-core`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_from_*` function and released by the matching `*_free`.
//! Functions return an [`IppgdStatus`]; on anything but `IPPGD_STATUS_OK`
//! the message is available from [`ippgd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ippgd_core::config::{self, BuiltProblem, ProblemSection, SolverSection};
use ippgd_core::solver::{run, Method, RunOutcome, RunStatus, SolverConfig};
use ippgd_core::{Error, Vector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IppgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IppgdMethod {
    Pgd = 0,
    Ippgd = 1,
    Ippgdv = 2,
    IppgdvTau = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IppgdRunStatus {
    Converged = 0,
    MaxIters = 1,
    Diverged = 2,
    Failed = 3,
}

/// A quadratic test problem or the flux problem on a uniform grid.
pub struct IppgdProblem {
    inner: BuiltProblem,
}

/// Solver settings for one method.
pub struct IppgdConfig {
    inner: SolverConfig,
}

/// Final iterate, status and trace summary of one run.
pub struct IppgdResult {
    inner: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Fail = (IppgdStatus, String);

fn from_core(e: Error) -> Fail {
    let code = match &e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => IppgdStatus::InvalidArgument,
        Error::Parse(_) => IppgdStatus::Parse,
        Error::Io(_) => IppgdStatus::Io,
        _ => IppgdStatus::Numerical,
    };
    (code, e.to_string())
}

fn null(what: &str) -> Fail {
    (IppgdStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> IppgdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IppgdStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            IppgdStatus::Panic
        }
    }
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IppgdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn method_of(m: IppgdMethod) -> Method {
    match m {
        IppgdMethod::Pgd => Method::Pgd,
        IppgdMethod::Ippgd => Method::Ippgd,
        IppgdMethod::Ippgdv => Method::Ippgdv,
        IppgdMethod::IppgdvTau => Method::IppgdvTau,
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ippgd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ippgd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Random equality-constrained quadratic. `schur_delta` in `[0,1)` sets the
/// inexactness of its Schur approximation.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ippgd_problem_quadratic(
    dim: usize,
    constraints: usize,
    kappa: f64,
    seed: u64,
    schur_delta: f64,
    out: *mut *mut IppgdProblem,
) -> IppgdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sec = ProblemSection {
            kind: "quadratic".into(),
            dim: Some(dim),
            constraints: Some(constraints),
            kappa: Some(kappa),
            seed: Some(seed),
            schur_delta: Some(schur_delta),
            metric_cond: None,
            metric_gain: None,
            grid: None,
            nu: None,
        };
        let inner = sec.build().map_err(from_core)?;
        *out = Box::into_raw(Box::new(IppgdProblem { inner }));
        Ok(())
    })
}

/// Flux problem on an `n × n` grid with `ν(s) = a0 + a1/(1+s)^a2`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ippgd_problem_pde(
    n: usize,
    a0: f64,
    a1: f64,
    a2: f64,
    out: *mut *mut IppgdProblem,
) -> IppgdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sec = ProblemSection {
            kind: "pde".into(),
            dim: None,
            constraints: None,
            kappa: None,
            seed: None,
            schur_delta: None,
            metric_cond: None,
            metric_gain: None,
            grid: Some(n),
            nu: Some([a0, a1, a2]),
        };
        let inner = sec.build().map_err(from_core)?;
        *out = Box::into_raw(Box::new(IppgdProblem { inner }));
        Ok(())
    })
}

/// Builds a problem and a solver configuration from TOML text with
/// `[problem]` and optional `[solver]` tables.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `problem` and `config` valid
/// pointers to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ippgd_from_toml(
    toml: *const c_char,
    problem: *mut *mut IppgdProblem,
    config: *mut *mut IppgdConfig,
) -> IppgdStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let p_out = out_ptr(problem, "problem")?;
        let c_out = out_ptr(config, "config")?;
        let file = config::parse_solve(text).map_err(from_core)?;
        let inner = file.problem.build().map_err(from_core)?;
        let cfg = file.solver.build(&inner).map_err(from_core)?;
        *p_out = Box::into_raw(Box::new(IppgdProblem { inner }));
        *c_out = Box::into_raw(Box::new(IppgdConfig { inner: cfg }));
        Ok(())
    })
}

/// Number of unknowns.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_problem_dim(problem: *const IppgdProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.spec().dim())
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ippgd_problem_free(problem: *mut IppgdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Default settings of `method` for `problem`, including its step size.
///
/// # Safety
/// `problem` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_new(
    problem: *const IppgdProblem,
    method: IppgdMethod,
    out: *mut *mut IppgdConfig,
) -> IppgdStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        let out = out_ptr(out, "out")?;
        let sec = SolverSection {
            method: Some(method_of(method).name().into()),
            ..Default::default()
        };
        let inner = sec.build(&p.inner).map_err(from_core)?;
        *out = Box::into_raw(Box::new(IppgdConfig { inner }));
        Ok(())
    })
}

fn with_config<F: FnOnce(&mut SolverConfig) -> Result<(), Fail>>(config: *mut IppgdConfig, f: F) -> IppgdStatus {
    guard(|| {
        // SAFETY: callers pass a live handle or null.
        let c = unsafe { config.as_mut() }.ok_or_else(|| null("config"))?;
        let mut next = c.inner.clone();
        f(&mut next)?;
        next.validate().map_err(from_core)?;
        c.inner = next;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_set_alpha(config: *mut IppgdConfig, alpha: f64) -> IppgdStatus {
    with_config(config, |c| {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err((IppgdStatus::InvalidArgument, "alpha must be positive".into()));
        }
        c.alpha = alpha;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_set_tau(config: *mut IppgdConfig, tau: f64) -> IppgdStatus {
    with_config(config, |c| {
        c.tau = tau;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_set_max_iters(config: *mut IppgdConfig, max_iters: usize) -> IppgdStatus {
    with_config(config, |c| {
        c.max_iters = max_iters;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_set_tolerances(
    config: *mut IppgdConfig,
    grad_tol: f64,
    step_tol: f64,
) -> IppgdStatus {
    with_config(config, |c| {
        if !(grad_tol > 0.0 && step_tol > 0.0) {
            return Err((IppgdStatus::InvalidArgument, "tolerances must be positive".into()));
        }
        c.grad_tol = grad_tol;
        c.step_tol = step_tol;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ippgd_config_free(config: *mut IppgdConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the solver from zero. Hitting the iteration limit or diverging is
/// not an error here; inspect [`ippgd_result_status`].
///
/// # Safety
/// `problem` and `config` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ippgd_solve(
    problem: *const IppgdProblem,
    config: *const IppgdConfig,
    out: *mut *mut IppgdResult,
) -> IppgdStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_ptr(out, "out")?;
        let spec = p.inner.spec();
        let inner = run(spec, &Vector::zeros(spec.dim()), &c.inner).map_err(from_core)?;
        *out = Box::into_raw(Box::new(IppgdResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_status(result: *const IppgdResult) -> IppgdRunStatus {
    match result.as_ref().map(|r| &r.inner.status) {
        Some(RunStatus::Converged(_)) => IppgdRunStatus::Converged,
        Some(RunStatus::MaxIters) => IppgdRunStatus::MaxIters,
        Some(RunStatus::Diverged(_)) => IppgdRunStatus::Diverged,
        Some(RunStatus::Failed(_)) | None => IppgdRunStatus::Failed,
    }
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_iterations(result: *const IppgdResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.trace.iterations())
}

/// Inner W-cycles summed over all iterations.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_total_cycles(result: *const IppgdResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.trace.total_cycles())
}

/// Gradient measure at the last recorded iterate, NaN when unavailable.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_grad_norm(result: *const IppgdResult) -> f64 {
    result
        .as_ref()
        .and_then(|r| r.inner.trace.records.last())
        .map_or(f64::NAN, |rec| rec.grad_norm_m)
}

/// Copies the final iterate into `buf`. With `len` smaller than the
/// dimension nothing is written and `IPPGD_STATUS_BUFFER_TOO_SMALL` returned.
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_solution(result: *const IppgdResult, buf: *mut f64, len: usize) -> IppgdStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let u = &r.inner.u;
        if len < u.len() {
            return Err((
                IppgdStatus::BufferTooSmall,
                format!("buffer holds {len} values, solution has {}", u.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(u.as_ptr(), buf, u.len());
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ippgd_result_free(result: *mut IppgdResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
