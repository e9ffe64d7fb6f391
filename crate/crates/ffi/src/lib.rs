//! C interface to `ab-horizon`.
//!
//! Conventions:
//! * Every fallible function returns an [`AbhStatus`]; results come back
//!   through out-pointers that are written only on success.
//! * Handles (`AbhData`, `AbhBuilder`) are opaque and owned by the caller,
//!   who releases them with the matching `*_free` function.
//! * Strings returned by the library must be released with
//!   [`abh_string_free`]. Input strings are NUL-terminated UTF-8.
//! * After a failure, [`abh_last_error`] describes it. The message is
//!   per-thread and stays valid until the next call on that thread.
//! * Panics never cross the boundary; they surface as `ABH_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ab_horizon::data::{compute_suffstats, TriggerData, TriggerDataBuilder};
use ab_horizon::fit::{fit, FitConfig, FitMethod};
use ab_horizon::io::{parse_long_csv, write_forecast_json, ForecastFile};
use ab_horizon::model::{
    forecast, log_marginal_likelihood, negbin_interval, predict_new_users, ForecastOptions, HyperParams,
};
use ab_horizon::simulate::{sample_model, SimConfig};
use ab_horizon::{Error, SuffStats};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbhStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is outside its domain or inconsistent with the data.
    InvalidArgument = 2,
    /// Malformed input file or string.
    Parse = 3,
    Io = 4,
    /// The data cannot support the requested fit.
    Unfit = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Hyperparameters `(β, σ, c, r)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbhParams {
    pub beta: f64,
    pub sigma: f64,
    pub c: f64,
    pub r: f64,
}

/// A point prediction with its central credible interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbhInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbhFitMethod {
    Mle = 0,
    Regression = 1,
}

/// Trigger data of one experiment arm.
pub struct AbhData(TriggerData);

/// Incremental construction of [`AbhData`].
pub struct AbhBuilder(TriggerDataBuilder);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AbhStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Range { .. } | Error::Domain { .. } | Error::Config(_) => AbhStatus::InvalidArgument,
            Error::Unfit(_) | Error::Init(_) => AbhStatus::Unfit,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => AbhStatus::Parse,
            Error::Io(_) => AbhStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AbhStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AbhStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AbhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AbhStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            AbhStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AbhStatus::Parse, format!("{what} is not valid UTF-8")))
}

unsafe fn data_arg<'a>(p: *const AbhData) -> Result<&'a TriggerData, Failure> {
    p.as_ref().map(|d| &d.0).ok_or_else(|| null("data"))
}

fn params_of(p: &AbhParams) -> Result<HyperParams, Failure> {
    Ok(HyperParams::new(p.beta, p.sigma, p.c, p.r)?)
}

fn pilot_stats(data: &TriggerData, pilot_days: u32) -> Result<SuffStats, Failure> {
    Ok(compute_suffstats(&data.restrict(pilot_days)?, pilot_days)?)
}

fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller guarantees it points to writable storage.
    unsafe { out.write(value) };
    Ok(())
}

fn write_handle(out: *mut *mut AbhData, data: TriggerData) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    write_out(out, Box::into_raw(Box::new(AbhData(data))))
}

/// Description of the last failure on this thread; empty after a success.
/// Never null.
#[no_mangle]
pub extern "C" fn abh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn abh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New empty builder. Never null.
#[no_mangle]
pub extern "C" fn abh_builder_new() -> *mut AbhBuilder {
    Box::into_raw(Box::new(AbhBuilder(TriggerData::builder())))
}

/// Record `count` triggers of `user` on `day` (1-based). Repeated
/// `(day, user)` pairs are summed; zero counts are ignored.
///
/// # Safety
/// `builder` must be a live builder; `user` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn abh_builder_add(
    builder: *mut AbhBuilder,
    day: u32,
    user: *const c_char,
    count: u64,
) -> AbhStatus {
    guard(|| {
        let b = builder.as_mut().ok_or_else(|| null("builder"))?;
        let user = str_arg(user, "user")?;
        Ok(b.0.add(day, user, count)?)
    })
}

/// Finish a builder. `days = 0` takes the last day seen. The builder is
/// consumed whether or not this succeeds.
///
/// # Safety
/// `builder` must be a live builder; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abh_builder_build(builder: *mut AbhBuilder, days: u32, out: *mut *mut AbhData) -> AbhStatus {
    guard(|| {
        if builder.is_null() {
            return Err(null("builder"));
        }
        let b = Box::from_raw(builder);
        if out.is_null() {
            return Err(null("output pointer"));
        }
        write_handle(out, b.0.build((days > 0).then_some(days))?)
    })
}

/// Discard a builder without building. Null is ignored.
///
/// # Safety
/// `builder` must be null or a live builder.
#[no_mangle]
pub unsafe extern "C" fn abh_builder_free(builder: *mut AbhBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// Load long-format CSV (`day,user,count`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abh_data_load_csv(path: *const c_char, out: *mut *mut AbhData) -> AbhStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        write_handle(out, parse_long_csv(Path::new(path))?)
    })
}

/// Draw `days` days from the model with the urn scheme.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abh_data_simulate(
    params: *const AbhParams,
    days: u32,
    seed: u64,
    out: *mut *mut AbhData,
) -> AbhStatus {
    guard(|| {
        let p = params_of(params.as_ref().ok_or_else(|| null("params"))?)?;
        write_handle(out, sample_model(&SimConfig::model(p, days, seed))?)
    })
}

/// Release a data handle. Null is ignored.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abh_data_free(data: *mut AbhData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of days covered; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abh_data_days(data: *const AbhData) -> u32 {
    data.as_ref().map_or(0, |d| d.0.days())
}

/// Number of distinct users; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abh_data_n_users(data: *const AbhData) -> u64 {
    data.as_ref().map_or(0, |d| d.0.n_users() as u64)
}

/// Fit hyperparameters on the first `pilot_days` days with default search
/// settings. `converged` may be null. A non-converged fit still succeeds
/// and returns the best point found.
///
/// # Safety
/// `data` must be a live handle, `out` writable, `converged` null or writable.
#[no_mangle]
pub unsafe extern "C" fn abh_fit(
    data: *const AbhData,
    pilot_days: u32,
    method: AbhFitMethod,
    seed: u64,
    out: *mut AbhParams,
    converged: *mut bool,
) -> AbhStatus {
    guard(|| {
        let stats = pilot_stats(data_arg(data)?, pilot_days)?;
        let config = FitConfig {
            method: match method {
                AbhFitMethod::Mle => FitMethod::Mle,
                AbhFitMethod::Regression => FitMethod::Regression,
            },
            seed,
            ..FitConfig::default()
        };
        let outcome = fit(&stats, &config)?;
        let HyperParams { beta, sigma, c, r } = outcome.params;
        write_out(out, AbhParams { beta, sigma, c, r })?;
        if !converged.is_null() {
            converged.write(outcome.converged);
        }
        Ok(())
    })
}

/// Log marginal likelihood of the first `pilot_days` days.
///
/// # Safety
/// `params` readable, `data` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abh_log_likelihood(
    params: *const AbhParams,
    data: *const AbhData,
    pilot_days: u32,
    out: *mut f64,
) -> AbhStatus {
    guard(|| {
        let p = params_of(params.as_ref().ok_or_else(|| null("params"))?)?;
        let stats = pilot_stats(data_arg(data)?, pilot_days)?;
        write_out(out, log_marginal_likelihood(&p, &stats)?)
    })
}

/// Expected number of new users over the `horizon` days after the pilot,
/// with a central credible interval at `level`.
///
/// # Safety
/// `params` readable, `data` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abh_predict_new_users(
    params: *const AbhParams,
    data: *const AbhData,
    pilot_days: u32,
    horizon: u32,
    level: f64,
    out: *mut AbhInterval,
) -> AbhStatus {
    guard(|| {
        let p = params_of(params.as_ref().ok_or_else(|| null("params"))?)?;
        let stats = pilot_stats(data_arg(data)?, pilot_days)?;
        let nb = predict_new_users(&p, &stats, horizon)?;
        let (lo, hi) = negbin_interval(&nb, level)?;
        write_out(
            out,
            AbhInterval {
                mean: nb.mean(),
                lo: lo as f64,
                hi: hi as f64,
            },
        )
    })
}

/// Full forecast (new users, by frequency, old users, total) as a JSON
/// document. Release the string with [`abh_string_free`].
///
/// # Safety
/// `params` readable, `data` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abh_forecast_json(
    params: *const AbhParams,
    data: *const AbhData,
    pilot_days: u32,
    horizon: u32,
    level: f64,
    n_mc: u64,
    seed: u64,
    out: *mut *mut c_char,
) -> AbhStatus {
    guard(|| {
        let p = params_of(params.as_ref().ok_or_else(|| null("params"))?)?;
        let stats = pilot_stats(data_arg(data)?, pilot_days)?;
        let opts = ForecastOptions {
            level,
            n_mc: usize::try_from(n_mc).map_err(|_| invalid("n_mc too large"))?,
            seed,
            ..ForecastOptions::default()
        };
        let report = forecast(&p, &stats, horizon, &opts)?;
        let mut buf = Vec::new();
        write_forecast_json(&ForecastFile::new(&report, p, seed), &mut buf)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let s = CString::new(buf).map_err(|_| invalid("forecast contains NUL"))?;
        write_out(out, s.into_raw())
    })
}
