//! C ABI over `phreservoir`.
//!
//! Models and Moran chains are opaque heap handles released with their
//! `_free` function. Every call returns a [`PhrStatus`]; on failure the
//! message is available from [`phr_last_error`] on the same thread until the
//! next failing call. Output pointers are written only on success. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use phreservoir::estimate::{fit, forward_pass, EmissionFamily, FitConfig};
use phreservoir::io::ModelFile;
use phreservoir::reservoir::{moran_from_model, MoranChain};
use phreservoir::rng::stream_rng;
use phreservoir::simulate::{forecast, sample_path};
use phreservoir::{expand_model, presets, Error, PhTypeHmm};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Opaque fitted or loaded model.
pub struct PhrModel(PhTypeHmm);

/// Opaque Moran storage chain.
pub struct PhrMoran(MoranChain);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PhrStatus {
    match e {
        Error::Usage(_)
        | Error::InvalidParameter(_)
        | Error::Dimension { .. }
        | Error::UnknownRegime(_) => PhrStatus::InvalidArgument,
        Error::Data { .. }
        | Error::OutOfDomain { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => PhrStatus::DataError,
        _ => PhrStatus::NumericalError,
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

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PhrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PhrStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PhrStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            PhrStatus::InvalidArgument
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
            PhrStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failure on this thread, or NULL. Owned by the
/// library; valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn phr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Built-in model by name ("two-regime-poisson", "three-regime-exponential").
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn phr_model_preset(name: *const c_char, out_model: *mut *mut PhrModel) -> PhrStatus {
    guard(|| {
        let name = text(name, "name")?;
        let slot = out(out_model, "out_model")?;
        *slot = boxed(PhrModel(presets::by_name(name)?));
        Ok(())
    })
}

/// Parse and validate a JSON model file.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_model` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn phr_model_from_json(json: *const c_char, out_model: *mut *mut PhrModel) -> PhrStatus {
    guard(|| {
        let json = text(json, "json")?;
        let slot = out(out_model, "out_model")?;
        *slot = boxed(PhrModel(ModelFile::from_json(json)?.to_model()?));
        Ok(())
    })
}

/// Serialize a model to JSON. Release the string with [`phr_string_free`].
///
/// # Safety
/// `model` must come from this library; `out_json` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn phr_model_to_json(model: *const PhrModel, out_json: *mut *mut c_char) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let slot = out(out_json, "out_json")?;
        let json = ModelFile::from_model(&m.0, None).to_json();
        *slot = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn phr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `model` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn phr_model_free(model: *mut PhrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of regimes and total number of extended (regime, phase) states.
///
/// # Safety
/// `model` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_model_dimensions(
    model: *const PhrModel,
    out_regimes: *mut usize,
    out_states: *mut usize,
) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let r = out(out_regimes, "out_regimes")?;
        let s = out(out_states, "out_states")?;
        *r = m.0.regimes();
        *s = m.0.layout().iter().sum();
        Ok(())
    })
}

/// Log-likelihood of `n` observations.
///
/// # Safety
/// `obs` must point to `n` doubles; `out_loglik` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_model_loglik(
    model: *const PhrModel,
    obs: *const f64,
    n: usize,
    out_loglik: *mut f64,
) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let obs = input(obs, n, "obs")?;
        let slot = out(out_loglik, "out_loglik")?;
        *slot = forward_pass(&expand_model(&m.0), obs)?.loglik;
        Ok(())
    })
}

/// Fit by EM. `layout` holds `regimes` phase counts; `families` is a
/// comma-separated list of one family per regime, or one for all
/// ("poisson", "exponential", "degenerate:V", "categorical:A|B").
///
/// # Safety
/// Array arguments must hold the stated number of elements; outputs must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_fit(
    obs: *const f64,
    n: usize,
    layout: *const usize,
    regimes: usize,
    families: *const c_char,
    restarts: usize,
    seed: u64,
    out_model: *mut *mut PhrModel,
    out_loglik: *mut f64,
) -> PhrStatus {
    guard(|| {
        let obs = input(obs, n, "obs")?;
        let layout = input(layout, regimes, "layout")?;
        let families = text(families, "families")?
            .split(',')
            .map(|s| {
                EmissionFamily::parse(s.trim())
                    .ok_or_else(|| Fail::Arg(format!("unknown emission family {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let slot = out(out_model, "out_model")?;
        let ll = out(out_loglik, "out_loglik")?;
        let mut cfg = FitConfig::new(layout.to_vec(), families);
        cfg.restarts = restarts;
        cfg.seed = seed;
        let report = fit(obs, &cfg)?;
        *ll = report.loglik;
        *slot = boxed(PhrModel(report.model));
        Ok(())
    })
}

/// Moran chain from the model's stationary inflow law. `max_states = 0`
/// keeps the full `floor(capacity / omega) + 1` states.
///
/// # Safety
/// `model` must come from this library; `out_moran` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_from_model(
    model: *const PhrModel,
    omega: f64,
    capacity: f64,
    max_states: usize,
    zero_band: f64,
    out_moran: *mut *mut PhrMoran,
) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let slot = out(out_moran, "out_moran")?;
        let cap = (max_states > 0).then_some(max_states);
        let chain = moran_from_model(&expand_model(&m.0), omega, capacity, cap, zero_band)?;
        *slot = boxed(PhrMoran(chain));
        Ok(())
    })
}

/// # Safety
/// `moran` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_free(moran: *mut PhrMoran) {
    if !moran.is_null() {
        drop(Box::from_raw(moran));
    }
}

/// # Safety
/// `moran` must come from this library; `out_states` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_states(moran: *const PhrMoran, out_states: *mut usize) -> PhrStatus {
    guard(|| {
        let c = reference(moran, "moran")?;
        *out(out_states, "out_states")? = c.0.states();
        Ok(())
    })
}

/// Copy the transition matrix row-major into `buf`, which must hold
/// `states * states` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_matrix(moran: *const PhrMoran, buf: *mut f64, len: usize) -> PhrStatus {
    guard(|| {
        let c = reference(moran, "moran")?;
        let s = c.0.states();
        if len != s * s {
            return Err(Fail::Arg(format!("matrix buffer holds {len}, need {}", s * s)));
        }
        let buf = output(buf, len, "buf")?;
        for r in 0..s {
            for col in 0..s {
                buf[r * s + col] = c.0.matrix()[(r, col)];
            }
        }
        Ok(())
    })
}

/// `R_v(n)`: probability of never emptying within `n` steps from state `v`.
///
/// # Safety
/// `moran` must come from this library; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_reliability(
    moran: *const PhrMoran,
    v: usize,
    n: usize,
    out_value: *mut f64,
) -> PhrStatus {
    guard(|| {
        let c = reference(moran, "moran")?;
        let slot = out(out_value, "out_value")?;
        *slot = c.0.reliability(v, n)?;
        Ok(())
    })
}

/// `A_v(n)`: probability of being non-empty at step `n` from state `v`.
///
/// # Safety
/// `moran` must come from this library; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_availability(
    moran: *const PhrMoran,
    v: usize,
    n: usize,
    out_value: *mut f64,
) -> PhrStatus {
    guard(|| {
        let c = reference(moran, "moran")?;
        let slot = out(out_value, "out_value")?;
        *slot = c.0.availability(v, n)?;
        Ok(())
    })
}

/// Mean time to empty from state `v`.
///
/// # Safety
/// `moran` must come from this library; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phr_moran_mttf(moran: *const PhrMoran, v: usize, out_value: *mut f64) -> PhrStatus {
    guard(|| {
        let c = reference(moran, "moran")?;
        let slot = out(out_value, "out_value")?;
        *slot = c.0.mttf(v)?;
        Ok(())
    })
}

/// Bootstrap forecast from the model's initial law. `out_mean` holds
/// `horizon` doubles; `out_quantiles` holds `horizon * n_levels`, row-major
/// by step.
///
/// # Safety
/// Arrays must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn phr_forecast(
    model: *const PhrModel,
    horizon: usize,
    replicates: usize,
    seed: u64,
    levels: *const f64,
    n_levels: usize,
    out_mean: *mut f64,
    out_quantiles: *mut f64,
) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let levels = input(levels, n_levels, "levels")?;
        let mean = output(out_mean, horizon, "out_mean")?;
        let quant = output(out_quantiles, horizon * n_levels, "out_quantiles")?;
        let bands = forecast(&m.0, horizon, replicates, seed, levels, None)?;
        mean.copy_from_slice(&bands.mean);
        for (h, row) in bands.quantiles.iter().enumerate() {
            quant[h * n_levels..(h + 1) * n_levels].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Sample a path of `n` steps from stream 0 of `seed`. `out_regimes` may be
/// NULL.
///
/// # Safety
/// `out_signals` must hold `n` doubles and `out_regimes`, when given, `n`
/// sizes.
#[no_mangle]
pub unsafe extern "C" fn phr_simulate_path(
    model: *const PhrModel,
    n: usize,
    seed: u64,
    out_signals: *mut f64,
    out_regimes: *mut usize,
) -> PhrStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let signals = output(out_signals, n, "out_signals")?;
        let path = sample_path(&m.0, n, &mut stream_rng(seed, 0))?;
        signals.copy_from_slice(&path.signals);
        if !out_regimes.is_null() {
            output(out_regimes, n, "out_regimes")?.copy_from_slice(&path.regimes);
        }
        Ok(())
    })
}
