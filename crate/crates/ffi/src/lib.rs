//! C ABI over the analytic model and the association optimizer.
//!
//! Every function returns a [`HetnetStatus`]; results go through out
//! pointers. Models, reports and optima are opaque heap handles owned by the
//! caller and released with the matching `*_free`. After a failure,
//! [`hetnet_last_error`] describes it on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hetnet::analytic::{self, AnalyticError, AnalyticReport, NetworkParams, TierConfig};
use hetnet::cli::{parse_config, ConfigError};
use hetnet::optimizer::{self, Method, MethodChoice, Optimum, OptimizerError, SolverOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    ConvergenceFailure = 4,
    BufferTooSmall = 5,
    OutOfRange = 6,
    ConfigError = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetnetMethod {
    Auto = 0,
    ClosedForm = 1,
    Numerical = 2,
}

/// Per-tier analytic values. `delay_bound` is +infinity for an unstable tier.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HetnetTierReport {
    pub association_prob: f64,
    pub rate_bps: f64,
    pub service_rate: f64,
    pub traffic_intensity: f64,
    pub sir_coverage: f64,
    pub delay_bound: f64,
    pub stable: bool,
}

/// Network parameters plus an ordered tier list.
pub struct HetnetModel {
    params: NetworkParams,
    tiers: Vec<TierConfig>,
}

pub struct HetnetReport(AnalyticReport);

pub struct HetnetOptimum(Optimum);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(HetnetStatus, String);

impl From<AnalyticError> for Failure {
    fn from(e: AnalyticError) -> Self {
        let status = match e {
            AnalyticError::TierOutOfRange { .. } => HetnetStatus::OutOfRange,
            _ => HetnetStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<OptimizerError> for Failure {
    fn from(e: OptimizerError) -> Self {
        let status = match &e {
            OptimizerError::Infeasible | OptimizerError::NoActiveTier => HetnetStatus::Infeasible,
            OptimizerError::ConvergenceFailure { .. } => HetnetStatus::ConvergenceFailure,
            _ => HetnetStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(HetnetStatus::ConfigError, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HetnetStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HetnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HetnetStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HetnetStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn write_slice(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err(Failure(
            HetnetStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", values.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

fn check_tier(k: usize, count: usize) -> Result<(), Failure> {
    if k >= count {
        return Err(Failure(HetnetStatus::OutOfRange, format!("tier {k} out of range for {count} tiers")));
    }
    Ok(())
}

/// Static description of a status code. Never NULL.
#[no_mangle]
pub extern "C" fn hetnet_status_string(status: HetnetStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HetnetStatus::Ok => c"ok",
        HetnetStatus::NullPointer => c"null pointer argument",
        HetnetStatus::InvalidArgument => c"invalid argument",
        HetnetStatus::Infeasible => c"infeasible: no association keeps every tier stable",
        HetnetStatus::ConvergenceFailure => c"solver did not converge",
        HetnetStatus::BufferTooSmall => c"output buffer too small",
        HetnetStatus::OutOfRange => c"index out of range",
        HetnetStatus::ConfigError => c"config could not be loaded",
        HetnetStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Message for the last failure on this thread. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn hetnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_compute_z(tau: f64, alpha: f64, out: *mut f64) -> HetnetStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        *out = analytic::compute_z(tau, alpha)?;
        Ok(())
    })
}

/// Creates a model with no tiers.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_new(
    user_intensity: f64,
    arrival_rate: f64,
    mean_packet_length: f64,
    sir_threshold: f64,
    alpha: f64,
    out: *mut *mut HetnetModel,
) -> HetnetStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        let params = NetworkParams {
            user_intensity,
            arrival_rate,
            mean_packet_length,
            sir_threshold,
            alpha,
        };
        params.validate()?;
        *out = Box::into_raw(Box::new(HetnetModel {
            params,
            tiers: Vec::new(),
        }));
        Ok(())
    })
}

/// Loads network and tier blocks from a TOML scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_from_config(path: *const c_char, out: *mut *mut HetnetModel) -> HetnetStatus {
    guard(|| {
        let out = unsafe { deref_mut(out, "out") }?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Failure(HetnetStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let cfg = parse_config(Path::new(path))?;
        *out = Box::into_raw(Box::new(HetnetModel {
            params: cfg.params,
            tiers: cfg.tiers,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `hetnet_model_*` constructor and not be freed yet.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_free(model: *mut HetnetModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Appends a tier. Power in watts, bandwidth in Hz, bias linear.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_add_tier(
    model: *mut HetnetModel,
    lambda: f64,
    power_w: f64,
    bandwidth_hz: f64,
    bias: f64,
) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref_mut(model, "model") }?;
        let tier = TierConfig {
            lambda,
            power: power_w,
            bandwidth: bandwidth_hz,
            bias,
        };
        tier.validate()?;
        m.tiers.push(tier);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_set_arrival_rate(model: *mut HetnetModel, arrival_rate: f64) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref_mut(model, "model") }?;
        let mut params = m.params;
        params.arrival_rate = arrival_rate;
        params.validate()?;
        m.params = params;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live model handle and `k` a valid tier index.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_set_bias(model: *mut HetnetModel, k: usize, bias: f64) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref_mut(model, "model") }?;
        check_tier(k, m.tiers.len())?;
        let mut tier = m.tiers[k];
        tier.bias = bias;
        tier.validate()?;
        m.tiers[k] = tier;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live model handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_model_tier_count(model: *const HetnetModel, out: *mut usize) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        *unsafe { deref_mut(out, "out") }? = m.tiers.len();
        Ok(())
    })
}

/// Writes one association probability per tier into `out[0..len)`.
///
/// # Safety
/// `model` must be a live model handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hetnet_association_probability(
    model: *const HetnetModel,
    out: *mut f64,
    len: usize,
) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let a = analytic::association_probability(&m.tiers, m.params.alpha)?;
        unsafe { write_slice(&a, out, len) }
    })
}

/// # Safety
/// `model` must be a live model handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_analyze(model: *const HetnetModel, out: *mut *mut HetnetReport) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        let report = analytic::analyze(&m.tiers, &m.params)?;
        *out = Box::into_raw(Box::new(HetnetReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`hetnet_analyze`] and not be freed yet. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn hetnet_report_free(report: *mut HetnetReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `report` must be a live report handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_report_tier_count(report: *const HetnetReport, out: *mut usize) -> HetnetStatus {
    guard(|| {
        let r = unsafe { deref(report, "report") }?;
        *unsafe { deref_mut(out, "out") }? = r.0.tiers.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be a live report handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_report_tier(
    report: *const HetnetReport,
    k: usize,
    out: *mut HetnetTierReport,
) -> HetnetStatus {
    guard(|| {
        let r = unsafe { deref(report, "report") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        check_tier(k, r.0.tiers.len())?;
        let t = &r.0.tiers[k];
        *out = HetnetTierReport {
            association_prob: t.association_prob,
            rate_bps: t.rate,
            service_rate: t.service_rate,
            traffic_intensity: t.traffic_intensity,
            sir_coverage: t.sir_coverage,
            delay_bound: t.delay_bound.seconds(),
            stable: t.stable,
        };
        Ok(())
    })
}

/// Network delay bound (+infinity when some tier is unstable) and SIR
/// coverage. Either out pointer may be NULL.
///
/// # Safety
/// `report` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn hetnet_report_network(
    report: *const HetnetReport,
    delay_bound: *mut f64,
    sir_coverage: *mut f64,
) -> HetnetStatus {
    guard(|| {
        let r = unsafe { deref(report, "report") }?;
        if let Some(d) = unsafe { delay_bound.as_mut() } {
            *d = r.0.delay_bound.seconds();
        }
        if let Some(c) = unsafe { sir_coverage.as_mut() } {
            *c = r.0.sir_coverage;
        }
        Ok(())
    })
}

/// Delay-optimal association. Biases are normalised to tier 0.
///
/// # Safety
/// `model` must be a live model handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimize(
    model: *const HetnetModel,
    method: HetnetMethod,
    out: *mut *mut HetnetOptimum,
) -> HetnetStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        let choice = match method {
            HetnetMethod::Auto => MethodChoice::Auto,
            HetnetMethod::ClosedForm => MethodChoice::ClosedForm,
            HetnetMethod::Numerical => MethodChoice::Numerical,
        };
        let opt = optimizer::optimize(&m.tiers, &m.params, choice, &SolverOptions::default())?;
        *out = Box::into_raw(Box::new(HetnetOptimum(opt)));
        Ok(())
    })
}

/// # Safety
/// `optimum` must come from [`hetnet_optimize`] and not be freed yet. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_free(optimum: *mut HetnetOptimum) {
    if !optimum.is_null() {
        drop(unsafe { Box::from_raw(optimum) });
    }
}

/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_tier_count(optimum: *const HetnetOptimum, out: *mut usize) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        *unsafe { deref_mut(out, "out") }? = o.0.association.len();
        Ok(())
    })
}

/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_association(
    optimum: *const HetnetOptimum,
    out: *mut f64,
    len: usize,
) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        unsafe { write_slice(&o.0.association, out, len) }
    })
}

/// Linear biases; shut-down tiers report 0.
///
/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_bias(optimum: *const HetnetOptimum, out: *mut f64, len: usize) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        unsafe { write_slice(&o.0.bias, out, len) }
    })
}

/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_delay(optimum: *const HetnetOptimum, out: *mut f64) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        *unsafe { deref_mut(out, "out") }? = o.0.delay.seconds();
        Ok(())
    })
}

/// Method actually used: `ClosedForm` or `Numerical`.
///
/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_method(optimum: *const HetnetOptimum, out: *mut HetnetMethod) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        *unsafe { deref_mut(out, "out") }? = match o.0.method {
            Method::ClosedForm => HetnetMethod::ClosedForm,
            Method::Numerical => HetnetMethod::Numerical,
        };
        Ok(())
    })
}

/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_residual(optimum: *const HetnetOptimum, out: *mut f64) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        *unsafe { deref_mut(out, "out") }? = o.0.residual;
        Ok(())
    })
}

/// # Safety
/// `optimum` must be a live optimum handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hetnet_optimum_is_shutdown(
    optimum: *const HetnetOptimum,
    k: usize,
    out: *mut bool,
) -> HetnetStatus {
    guard(|| {
        let o = unsafe { deref(optimum, "optimum") }?;
        let out = unsafe { deref_mut(out, "out") }?;
        check_tier(k, o.0.association.len())?;
        *out = o.0.shutdown_tiers.contains(&k);
        Ok(())
    })
}
