//! C ABI over `contraction-mpc`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_preset`/`certify` call and released by the matching `*_free`.
//! Functions return a [`CmpcStatus`]; on failure the message is available
//! from [`cmpc_last_error`] until the next call on the same thread. Panics are
//! caught and reported as [`CmpcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use contraction_mpc::config::Scenario;
use contraction_mpc::contraction::ContractionCertificate;
use contraction_mpc::controller::Controller;
use contraction_mpc::tightening::compute_tightening;
use contraction_mpc::{Error, PlantModel};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DisturbanceTooLarge = 4,
    CertificateUnavailable = 5,
    ControllerFault = 6,
    Failure = 7,
    Panic = 8,
}

/// A scenario together with its plant.
pub struct CmpcScenario {
    scenario: Scenario,
    plant: PlantModel,
}

pub struct CmpcCertificate(ContractionCertificate);

pub struct CmpcController(Controller);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CmpcStatus {
    match e {
        Error::Dimension { .. } => CmpcStatus::InvalidArgument,
        Error::InvalidModel(_)
        | Error::NotSpd(_)
        | Error::Singular(_)
        | Error::InvalidConfig(_)
        | Error::UnknownPreset(_)
        | Error::Json(_) => CmpcStatus::InvalidConfig,
        Error::DisturbanceTooLarge => CmpcStatus::DisturbanceTooLarge,
        Error::CertificateUnavailable { .. } => CmpcStatus::CertificateUnavailable,
        Error::ControllerFault(_) => CmpcStatus::ControllerFault,
        Error::Rcis(_) | Error::NoTerminalRegion(_) | Error::Io(_) => CmpcStatus::Failure,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CmpcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmpcStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CmpcStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            CmpcStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CmpcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn expect_len(what: &str, got: usize, want: usize) -> Result<(), Fail> {
    if got != want {
        return Err(Fail::Arg(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn new_scenario(scenario: Scenario, smoke: bool) -> Result<CmpcScenario, Fail> {
    let scenario = if smoke { scenario.smoke() } else { scenario };
    let plant = scenario.plant()?;
    Ok(CmpcScenario { scenario, plant })
}

/// Built-in scenario by name. `smoke != 0` selects the reduced grids.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_scenario_preset(name: *const c_char, smoke: i32, out: *mut *mut CmpcScenario) -> CmpcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let s = new_scenario(Scenario::preset(name)?, smoke != 0)?;
        put(out, s)
    })
}

/// Scenario from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_scenario_from_json(json: *const c_char, smoke: i32, out: *mut *mut CmpcScenario) -> CmpcStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let scenario: Scenario = serde_json::from_str(text).map_err(Error::from)?;
        let s = new_scenario(scenario, smoke != 0)?;
        put(out, s)
    })
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmpc_scenario_free(s: *mut CmpcScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// State, input and disturbance dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmpc_scenario_dims(s: *const CmpcScenario, n: *mut usize, m: *mut usize, r: *mut usize) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        *obj_mut(n, "n")? = s.plant.n();
        *obj_mut(m, "m")? = s.plant.m();
        *obj_mut(r, "r")? = s.plant.r();
        Ok(())
    })
}

/// One plant step `x+ = f(x, u, w)`.
///
/// # Safety
/// `x`, `out` hold `n` values, `u` holds `m`, `w` holds `r`.
#[no_mangle]
pub unsafe extern "C" fn cmpc_plant_step(
    s: *const CmpcScenario,
    x: *const f64,
    u: *const f64,
    w: *const f64,
    out: *mut f64,
) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        let p = &s.plant;
        let next = p.step(slice(x, p.n(), "x")?, slice(u, p.m(), "u")?, slice(w, p.r(), "w")?)?;
        slice_mut(out, p.n(), "out")?.copy_from_slice(&next);
        Ok(())
    })
}

/// Tightening sequences for `j = 0..=horizon`, row-major `(horizon + 1) x n`
/// into `f_out` and `r_out`; `len` is the capacity of each buffer.
///
/// # Safety
/// `f_out` and `r_out` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cmpc_tightening(
    s: *const CmpcScenario,
    horizon: usize,
    f_out: *mut f64,
    r_out: *mut f64,
    len: usize,
) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        let n = s.plant.n();
        expect_len("tightening buffers", len, (horizon + 1) * n)?;
        let seq = compute_tightening(&s.plant, horizon);
        let f = slice_mut(f_out, len, "f_out")?;
        let r = slice_mut(r_out, len, "r_out")?;
        for j in 0..=horizon {
            f[j * n..(j + 1) * n].copy_from_slice(&seq.c[j]);
            r[j * n..(j + 1) * n].copy_from_slice(&seq.d[j]);
        }
        Ok(())
    })
}

/// Run the certification pipeline.
///
/// # Safety
/// `s` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_certify(s: *const CmpcScenario, out: *mut *mut CmpcCertificate) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        let cert = s.scenario.certify(&s.plant)?;
        put(out, CmpcCertificate(cert))
    })
}

/// Load a certificate saved as JSON and check it against the scenario's plant.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_certificate_from_json(
    s: *const CmpcScenario,
    json: *const c_char,
    out: *mut *mut CmpcCertificate,
) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        let cert: ContractionCertificate = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        cert.validate(&s.plant)?;
        put(out, CmpcCertificate(cert))
    })
}

/// Certificate as JSON; release with [`cmpc_string_free`].
///
/// # Safety
/// `c` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_certificate_to_json(c: *const CmpcCertificate, out: *mut *mut c_char) -> CmpcStatus {
    guard(|| {
        let c = obj(c, "certificate")?;
        let text = serde_json::to_string(&c.0).map_err(Error::from)?;
        let s = CString::new(text).map_err(|_| Fail::Arg("JSON contains NUL".into()))?;
        *obj_mut(out, "out")? = s.into_raw();
        Ok(())
    })
}

/// Horizon, contraction factor, sublevel value and `Γ_max`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmpc_certificate_summary(
    c: *const CmpcCertificate,
    n_p: *mut usize,
    gamma: *mut f64,
    omega: *mut f64,
    gamma_max: *mut f64,
) -> CmpcStatus {
    guard(|| {
        let c = &obj(c, "certificate")?.0;
        *obj_mut(n_p, "n_p")? = c.n_p;
        *obj_mut(gamma, "gamma")? = c.gamma;
        *obj_mut(omega, "omega")? = c.omega;
        *obj_mut(gamma_max, "gamma_max")? = c.gamma_max;
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmpc_certificate_free(c: *mut CmpcCertificate) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Controller for the scenario's settings. The certificate is copied.
///
/// # Safety
/// `s` and `c` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmpc_controller_new(
    s: *const CmpcScenario,
    c: *const CmpcCertificate,
    out: *mut *mut CmpcController,
) -> CmpcStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        let c = obj(c, "certificate")?;
        let cfg = s.scenario.controller_config(&s.plant, c.0.clone())?;
        put(out, CmpcController(Controller::new(s.plant.clone(), cfg)))
    })
}

/// Solve at state `x` (`n` values) and write the input to apply into `u`
/// (`m` values). `v_star` and `theta` may be NULL.
///
/// # Safety
/// Buffers must hold `n` and `m` values.
#[no_mangle]
pub unsafe extern "C" fn cmpc_controller_step(
    ctrl: *mut CmpcController,
    x: *const f64,
    n: usize,
    u: *mut f64,
    m: usize,
    v_star: *mut f64,
    theta: *mut f64,
) -> CmpcStatus {
    guard(|| {
        let ctrl = &mut obj_mut(ctrl, "controller")?.0;
        expect_len("x", n, ctrl.model().n())?;
        expect_len("u", m, ctrl.model().m())?;
        let (input, d) = ctrl.step(slice(x, n, "x")?)?;
        slice_mut(u, m, "u")?.copy_from_slice(&input);
        if let Some(v) = v_star.as_mut() {
            *v = d.v_star;
        }
        if let Some(t) = theta.as_mut() {
            *t = d.theta;
        }
        Ok(())
    })
}

/// Forget `θ` and the warm start.
///
/// # Safety
/// `ctrl` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmpc_controller_reset(ctrl: *mut CmpcController) -> CmpcStatus {
    guard(|| {
        obj_mut(ctrl, "controller")?.0.reset();
        Ok(())
    })
}

/// # Safety
/// `ctrl` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cmpc_controller_free(ctrl: *mut CmpcController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}
