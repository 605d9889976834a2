//! C interface to the `framing` library.
//!
//! Networks and attack plans are opaque handles created and released by
//! this library. Every fallible call returns an [`FdiStatus`]; the message
//! for the most recent failure on the calling thread is available from
//! [`fdi_last_error`]. Output arrays are caller-owned and length-checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use nalgebra::DVector;

use framing::attack::{framing_direction, AttackPlan};
use framing::dcmodel::{noise_model, LinearModel, NoiseProfile};
use framing::estimator::iterative_estimation;
use framing::netmodel::{full_meter_layout, load_case, parse_ieee_cdf, GridNetwork};
use framing::oracle::predict_perturbation;
use framing::Error;

/// Result codes. Values match the command-line exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdiStatus {
    Ok = 0,
    /// Malformed case data, meter list or argument.
    InvalidInput = 2,
    /// The request has no solution, e.g. an unobservable network or an empty attack space.
    Infeasible = 3,
    /// A numerical routine failed.
    Numerical = 4,
    /// A required pointer was null.
    NullPointer = 5,
    /// An output buffer is too small.
    BufferTooSmall = 6,
    /// An unexpected internal failure.
    Internal = 7,
}

/// A parsed network with the full meter layout (an injection meter at every
/// bus, a flow meter at both ends of every line).
pub struct FdiNetwork {
    net: Arc<GridNetwork>,
    model: Option<LinearModel>,
}

/// A framing attack plan designed on a particular network.
pub struct FdiPlan {
    plan: AttackPlan,
    meter_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: FdiStatus, msg: impl Into<String>) -> FdiStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> FdiStatus {
    let status = match e.exit_code() {
        2 => FdiStatus::InvalidInput,
        3 => FdiStatus::Infeasible,
        _ => FdiStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> FdiStatus) -> FdiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(FdiStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, FdiStatus> {
    if p.is_null() {
        return Err(fail(FdiStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FdiStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn write_slice(values: &[f64], out: *mut f64, capacity: usize, written: *mut usize) -> FdiStatus {
    if !written.is_null() {
        *written = values.len();
    }
    if capacity < values.len() {
        return fail(
            FdiStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} required", values.len()),
        );
    }
    if values.is_empty() {
        return FdiStatus::Ok;
    }
    if out.is_null() {
        return fail(FdiStatus::NullPointer, "output buffer is null");
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    FdiStatus::Ok
}

fn wrap_network(net: GridNetwork) -> Box<FdiNetwork> {
    let net = Arc::new(net);
    let model = LinearModel::with_unit_noise(net.clone(), full_meter_layout(&net)).ok();
    Box::new(FdiNetwork { net, model })
}

fn model_of(n: &FdiNetwork) -> Result<&LinearModel, FdiStatus> {
    n.model
        .as_ref()
        .ok_or_else(|| fail(FdiStatus::Infeasible, "network is not observable with the full meter layout"))
}

/// Message for the last failure on this thread, or null if none occurred.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fdi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses IEEE Common Data Format text into a new network.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_from_cdf(text: *const c_char, out: *mut *mut FdiNetwork) -> FdiStatus {
    guard(|| {
        if out.is_null() {
            return fail(FdiStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_ieee_cdf(text) {
            Ok(net) => {
                *out = Box::into_raw(wrap_network(net));
                FdiStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Loads a bundled case (`"ieee14"` or `"ieee118"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_builtin(name: *const c_char, out: *mut *mut FdiNetwork) -> FdiStatus {
    guard(|| {
        if out.is_null() {
            return fail(FdiStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let name = match read_str(name, "name") {
            Ok(t) => t,
            Err(s) => return s,
        };
        if !matches!(name, "ieee14" | "ieee118") {
            return fail(FdiStatus::InvalidInput, format!("unknown built-in case {name:?}"));
        }
        match load_case(name) {
            Ok(net) => {
                *out = Box::into_raw(wrap_network(net));
                FdiStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_free(net: *mut FdiNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of buses, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_bus_count(net: *const FdiNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.bus_count())
}

/// Number of merged lines, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_line_count(net: *const FdiNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.line_count())
}

/// Number of meters in the full layout, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_meter_count(net: *const FdiNetwork) -> usize {
    net.as_ref().map_or(0, |n| full_meter_layout(&n.net).len())
}

/// Number of state variables (bus angles other than the reference), or 0
/// for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_state_dim(net: *const FdiNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.state_dim())
}

/// Whether the full meter layout makes the state observable.
///
/// # Safety
/// `net` must be a live network handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_observable(net: *const FdiNetwork, out: *mut bool) -> FdiStatus {
    match (net.as_ref(), out.is_null()) {
        (Some(n), false) => {
            *out = n.model.is_some();
            FdiStatus::Ok
        }
        _ => fail(FdiStatus::NullPointer, "net or out is null"),
    }
}

/// Sets uniform meter noise so that every meter has the given SNR in dB
/// relative to the RMS of the nominal measurements.
///
/// # Safety
/// `net` must be a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_network_set_snr(net: *mut FdiNetwork, snr_db: f64) -> FdiStatus {
    guard(|| {
        let Some(n) = net.as_mut() else {
            return fail(FdiStatus::NullPointer, "net is null");
        };
        let model = match model_of(n) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let nominal = model.nominal_measurements();
        let updated = noise_model(model.meter_count(), &NoiseProfile::Uniform, snr_db, &nominal)
            .and_then(|nm| model.with_noise(nm));
        match updated {
            Ok(m) => {
                n.model = Some(m);
                FdiStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Designs the optimal framing direction for adversary meters `adversary`
/// and framed meters `framed`, both given as meter lists such as
/// `"2-3,3-4,4-3"` (injection at a bus: `"3"`, flow from bus 3 to 2: `"3-2"`).
/// The plan starts with `eta = 1`.
///
/// # Safety
/// `net` must be a live network handle, the strings NUL-terminated and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdi_design_framing(
    net: *const FdiNetwork,
    adversary: *const c_char,
    framed: *const c_char,
    out: *mut *mut FdiPlan,
) -> FdiStatus {
    guard(|| {
        if out.is_null() {
            return fail(FdiStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(n) = net.as_ref() else {
            return fail(FdiStatus::NullPointer, "net is null");
        };
        let (adversary, framed) = match (read_str(adversary, "adversary"), read_str(framed, "framed")) {
            (Ok(a), Ok(f)) => (a, f),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let model = match model_of(n) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let designed = n
            .net
            .parse_meter_list(adversary)
            .and_then(|sa| Ok((sa, n.net.parse_meter_list(framed)?)))
            .and_then(|(sa, sf)| framing_direction(model, &sa, &sf));
        match designed {
            Ok(plan) => {
                *out = Box::into_raw(Box::new(FdiPlan { plan, meter_count: model.meter_count() }));
                FdiStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a plan. Null is ignored.
///
/// # Safety
/// `plan` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_free(plan: *mut FdiPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Value of the framing objective at the unit direction, or NaN for null.
///
/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_objective(plan: *const FdiPlan) -> f64 {
    plan.as_ref().map_or(f64::NAN, |p| p.plan.objective_value)
}

/// Dimension of the feasible attack subspace, or 0 for null.
///
/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_feasible_dim(plan: *const FdiPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.feasible_dim)
}

/// Attack scale `eta`, or NaN for null.
///
/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_eta(plan: *const FdiPlan) -> f64 {
    plan.as_ref().map_or(f64::NAN, |p| p.plan.eta)
}

/// Sets the attack scale. Its sign orients the attack.
///
/// # Safety
/// `plan` must be a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_set_eta(plan: *mut FdiPlan, eta: f64) -> FdiStatus {
    let Some(p) = plan.as_mut() else {
        return fail(FdiStatus::NullPointer, "plan is null");
    };
    if !eta.is_finite() {
        return fail(FdiStatus::InvalidInput, "eta must be finite");
    }
    p.plan.eta = eta;
    FdiStatus::Ok
}

/// Copies the attack vector `eta * direction` (one entry per meter) into
/// `out`. `written` receives the required length even when the buffer is
/// too small.
///
/// # Safety
/// `plan` must be a live plan handle; `out` must hold `capacity` doubles;
/// `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn fdi_plan_attack_vector(
    plan: *const FdiPlan,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> FdiStatus {
    let Some(p) = plan.as_ref() else {
        return fail(FdiStatus::NullPointer, "plan is null");
    };
    write_slice(p.plan.attack_vector().as_slice(), out, capacity, written)
}

/// Noiseless prediction of the state-estimate change the plan causes after
/// bad-data removal, one entry per state variable (radians).
///
/// # Safety
/// `net` and `plan` must be live handles; `out` must hold `capacity`
/// doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn fdi_predict_perturbation(
    net: *const FdiNetwork,
    plan: *const FdiPlan,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> FdiStatus {
    guard(|| {
        let (Some(n), Some(p)) = (net.as_ref(), plan.as_ref()) else {
            return fail(FdiStatus::NullPointer, "net or plan is null");
        };
        let model = match model_of(n) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if p.meter_count != model.meter_count() {
            return fail(FdiStatus::InvalidInput, "plan was designed on a different network");
        }
        match predict_perturbation(model, &p.plan) {
            Ok(dx) => write_slice(dx.as_slice(), out, capacity, written),
            Err(e) => from_error(&e),
        }
    })
}

/// DC weighted least-squares estimation with iterative bad-data removal at
/// false-alarm rate `alpha`. `z` holds one measurement per meter in the full
/// layout; `x_out` receives the final estimate (one entry per state
/// variable). `removed` (optional) receives the number of meters removed.
///
/// # Safety
/// `net` must be a live handle; `z` must hold `z_len` doubles; `x_out` must
/// hold `capacity` doubles; `written` and `removed` may be null.
#[no_mangle]
pub unsafe extern "C" fn fdi_estimate_dc(
    net: *const FdiNetwork,
    z: *const f64,
    z_len: usize,
    alpha: f64,
    x_out: *mut f64,
    capacity: usize,
    written: *mut usize,
    removed: *mut usize,
) -> FdiStatus {
    guard(|| {
        let Some(n) = net.as_ref() else {
            return fail(FdiStatus::NullPointer, "net is null");
        };
        if z.is_null() {
            return fail(FdiStatus::NullPointer, "z is null");
        }
        let model = match model_of(n) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if z_len != model.meter_count() {
            return fail(
                FdiStatus::InvalidInput,
                format!("z has {z_len} entries, the network has {} meters", model.meter_count()),
            );
        }
        let zv = DVector::from_column_slice(std::slice::from_raw_parts(z, z_len));
        match iterative_estimation(model, &zv, alpha) {
            Ok(trace) => {
                if !removed.is_null() {
                    *removed = trace.removal_sequence.len();
                }
                write_slice(trace.final_estimate.as_slice(), x_out, capacity, written)
            }
            Err(e) => from_error(&e),
        }
    })
}
