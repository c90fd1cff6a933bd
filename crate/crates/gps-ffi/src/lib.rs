//! C ABI for the panel group inference library: opaque handles for panels
//! and fits, status codes, and JSON strings for structured results.
//!
//! Every function returns a [`GpsStatus`]; on failure a thread-local
//! message is retrievable via [`gps_last_error_message`]. Strings returned
//! through `out` parameters are owned by the caller and must be released
//! with [`gps_string_free`]; handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gps_core::cli::{covariance_for_fit, HypothesisFile};
use gps_core::error::Error;
use gps_core::estimators::{gfe_fit, pcr_fit, tsk_fit, unit_ols, FitInput, GroupFit};
use gps_core::panel::{load_panel, CsvSchema, PanelDataset};
use gps_core::selective::selective_test;
use gps_core::variance::CovMethod;

/// Result codes for every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalError = 3,
    IoError = 4,
    ParseError = 5,
    InternalPanic = 6,
}

/// Group-structure estimators.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsMethod {
    Tsk = 0,
    Pcr = 1,
    Gfe = 2,
}

/// Covariance estimators for the group coefficients.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsCovariance {
    Pesaran = 0,
    DriscollKraay = 1,
    Theoretical = 2,
}

/// Opaque balanced panel handle.
pub struct GpsPanel(PanelDataset);

/// Opaque fit handle.
pub struct GpsFit(GroupFit);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GpsStatus {
    match err {
        Error::Io(_) | Error::Csv(_) => GpsStatus::IoError,
        Error::Json(_) => GpsStatus::ParseError,
        e if e.exit_code() == 2 => GpsStatus::InvalidArgument,
        _ => GpsStatus::NumericalError,
    }
}

/// Run a closure, translating errors and panics into status codes.
fn guarded<F: FnOnce() -> Result<GpsStatus, Error>>(f: F) -> GpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => {
            set_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_error("internal panic");
            GpsStatus::InternalPanic
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, Error> {
    if ptr.is_null() {
        return Err(Error::InvalidInput("null string argument".into()));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Error::InvalidInput("argument is not valid UTF-8".into()))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<GpsStatus, Error> {
    let c = CString::new(s).map_err(|_| Error::InvalidInput("output contains NUL".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(GpsStatus::Ok)
}

/// Library version as a static string (do not free).
#[no_mangle]
pub extern "C" fn gps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call; do not free.
#[no_mangle]
pub extern "C" fn gps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a balanced panel from a long-format CSV file with header
/// `unit,time,y,x1..xK`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gps_panel_load_csv(
    path: *const c_char,
    out: *mut *mut GpsPanel,
) -> GpsStatus {
    if out.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let path = cstr_arg(path)?;
        let panel = load_panel(path, &CsvSchema::default())?;
        *out = Box::into_raw(Box::new(GpsPanel(panel)));
        Ok(GpsStatus::Ok)
    })
}

/// Build a panel from dense arrays: `y` is N*T (unit-major), `x` is N*T*K.
///
/// # Safety
/// `y` must point to `n*t` doubles, `x` to `n*t*k` doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gps_panel_from_arrays(
    n: usize,
    t: usize,
    k: usize,
    y: *const f64,
    x: *const f64,
    out: *mut *mut GpsPanel,
) -> GpsStatus {
    if out.is_null() || y.is_null() || x.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let y = std::slice::from_raw_parts(y, n * t);
        let x = std::slice::from_raw_parts(x, n * t * k);
        let panel = PanelDataset::from_arrays(n, t, k, y, x)?;
        *out = Box::into_raw(Box::new(GpsPanel(panel)));
        Ok(GpsStatus::Ok)
    })
}

/// One-way within transformation into a new handle.
///
/// # Safety
/// `panel` must be a live handle from this library, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gps_panel_within_transform(
    panel: *const GpsPanel,
    out: *mut *mut GpsPanel,
) -> GpsStatus {
    if panel.is_null() || out.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let transformed = (*panel).0.within_transform()?;
        *out = Box::into_raw(Box::new(GpsPanel(transformed)));
        Ok(GpsStatus::Ok)
    })
}

/// Panel dimensions.
///
/// # Safety
/// `panel` must be a live handle; dimension pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn gps_panel_dims(
    panel: *const GpsPanel,
    n: *mut usize,
    t: *mut usize,
    k: *mut usize,
) -> GpsStatus {
    if panel.is_null() {
        return GpsStatus::NullPointer;
    }
    let d = &(*panel).0;
    if !n.is_null() {
        *n = d.n();
    }
    if !t.is_null() {
        *t = d.t();
    }
    if !k.is_null() {
        *k = d.k();
    }
    GpsStatus::Ok
}

/// Release a panel handle. Null is a no-op.
///
/// # Safety
/// `panel` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gps_panel_free(panel: *mut GpsPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Estimate the group structure: TSK clusters unit-level OLS coefficients,
/// PCR pools per group, GFE augments with time dummies.
///
/// # Safety
/// `panel` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gps_fit(
    panel: *const GpsPanel,
    method: GpsMethod,
    groups: u32,
    restarts: u32,
    seed: u64,
    out: *mut *mut GpsFit,
) -> GpsStatus {
    if panel.is_null() || out.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let d = &(*panel).0;
        let fit = match method {
            GpsMethod::Tsk => {
                let b = unit_ols(d)?;
                tsk_fit(&b, groups as usize, restarts as usize, seed)?
            }
            GpsMethod::Pcr => pcr_fit(d, groups as usize, restarts as usize, seed)?,
            GpsMethod::Gfe => gfe_fit(d, groups as usize, restarts as usize, seed)?,
        };
        *out = Box::into_raw(Box::new(GpsFit(fit)));
        Ok(GpsStatus::Ok)
    })
}

/// Number of groups in a fit.
///
/// # Safety
/// `fit` must be a live handle, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gps_fit_group_count(fit: *const GpsFit, out: *mut u32) -> GpsStatus {
    if fit.is_null() || out.is_null() {
        return GpsStatus::NullPointer;
    }
    *out = (*fit).0.group_count as u32;
    GpsStatus::Ok
}

/// Objective value at convergence.
///
/// # Safety
/// `fit` must be a live handle, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gps_fit_objective(fit: *const GpsFit, out: *mut f64) -> GpsStatus {
    if fit.is_null() || out.is_null() {
        return GpsStatus::NullPointer;
    }
    *out = (*fit).0.objective;
    GpsStatus::Ok
}

/// Copy one-based group labels into `buf` (length must be at least N).
///
/// # Safety
/// `fit` must be a live handle; `buf` must point to `len` writable u32.
#[no_mangle]
pub unsafe extern "C" fn gps_fit_labels(
    fit: *const GpsFit,
    buf: *mut u32,
    len: usize,
) -> GpsStatus {
    if fit.is_null() || buf.is_null() {
        return GpsStatus::NullPointer;
    }
    let labels = (*fit).0.gamma.one_based();
    if len < labels.len() {
        set_error("label buffer too small");
        return GpsStatus::InvalidArgument;
    }
    for (i, g) in labels.iter().enumerate() {
        *buf.add(i) = *g as u32;
    }
    GpsStatus::Ok
}

/// Serialize a fit (method, labels, coefficients, iteration trace) to JSON.
///
/// # Safety
/// `fit` must be a live handle; `out` receives a string to free with
/// [`gps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn gps_fit_to_json(
    fit: *const GpsFit,
    out: *mut *mut c_char,
) -> GpsStatus {
    if fit.is_null() || out.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| out_string((*fit).0.to_json()?, out))
}

/// Rebuild a fit handle from its JSON serialization.
///
/// # Safety
/// `json` must be a valid NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gps_fit_from_json(
    json: *const c_char,
    out: *mut *mut GpsFit,
) -> GpsStatus {
    if out.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let fit = GroupFit::from_json(cstr_arg(json)?)?;
        *out = Box::into_raw(Box::new(GpsFit(fit)));
        Ok(GpsStatus::Ok)
    })
}

/// Release a fit handle. Null is a no-op.
///
/// # Safety
/// `fit` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gps_fit_free(fit: *mut GpsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Trace-conditioned selective test of `R alpha = r`.
///
/// `hypothesis_json` carries `{"r_matrix": [[..]], "r_vec": [..]}`;
/// `bandwidth <= 0` selects the default Driscoll-Kraay bandwidth; `sigma2`
/// is only consulted for the theoretical covariance (pass NaN otherwise).
/// The result (statistic, p-values, truncation intervals) is returned as
/// JSON in `out_json`.
///
/// # Safety
/// `panel` and `fit` must be live handles from this library;
/// `hypothesis_json` a valid string; `out_json` valid. The returned string
/// must be freed with [`gps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn gps_selective_test(
    panel: *const GpsPanel,
    fit: *const GpsFit,
    hypothesis_json: *const c_char,
    covariance: GpsCovariance,
    bandwidth: c_int,
    sigma2: f64,
    out_json: *mut *mut c_char,
) -> GpsStatus {
    if panel.is_null() || fit.is_null() || out_json.is_null() {
        return GpsStatus::NullPointer;
    }
    guarded(|| {
        let d = &(*panel).0;
        let fit = &(*fit).0;
        let h = HypothesisFile::parse(cstr_arg(hypothesis_json)?)?;
        let cov_method = match covariance {
            GpsCovariance::Pesaran => CovMethod::Pesaran,
            GpsCovariance::DriscollKraay => CovMethod::DriscollKraay,
            GpsCovariance::Theoretical => CovMethod::Theoretical,
        };
        let bw = (bandwidth > 0).then_some(bandwidth as usize);
        let s2 = sigma2.is_finite().then_some(sigma2);
        let cov = covariance_for_fit(d, fit, cov_method, bw, s2)?;
        let result = selective_test(fit, FitInput::Panel(d), &h, &cov)?;
        out_string(result.to_json()?, out_json)
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have been returned by a `gps_*` function and not freed twice.
#[no_mangle]
pub unsafe extern "C" fn gps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
