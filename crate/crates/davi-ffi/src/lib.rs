//! C ABI for the amortized inverse-problem sampler.
//!
//! The surface is deliberately small: run a full experiment from a JSON
//! config, load a trained checkpoint as an opaque handle, and restore
//! measurements through single network evaluations. Every function returns a
//! [`DaviStatus`]; `davi_last_error` carries the message of the most recent
//! failure on the calling thread.
//!
//! The generated header lives at `include/davi.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

use davi_core::harness::config::ExperimentConfig;
use davi_core::harness::run_experiment_in;
use davi_core::harness::selfcheck;
use davi_core::networks::AmortizedPosterior;
use davi_core::operators::{LinearOperator, Measurement, NoiseKind};
use davi_core::rng::SeededRng;
use davi_core::trainer::Checkpoint;
use davi_core::{diffusion::NoiseSchedule, Error};

/// Result codes of every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaviStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    JsonError = 4,
    IoError = 5,
    NumericError = 6,
    DimensionMismatch = 7,
    SelfCheckFailed = 8,
    InternalError = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
}

fn status_of(err: &Error) -> DaviStatus {
    match err {
        Error::Parameter(_) | Error::Config(_) | Error::State(_) => DaviStatus::InvalidArgument,
        Error::Dimension(_) => DaviStatus::DimensionMismatch,
        Error::Domain(_) | Error::Numeric(_) => DaviStatus::NumericError,
        Error::Io { .. } => DaviStatus::IoError,
        Error::Json(_) => DaviStatus::JsonError,
    }
}

fn fail(err: Error) -> DaviStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Message of the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn davi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, DaviStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(DaviStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid utf-8");
        DaviStatus::InvalidUtf8
    })
}

/// Trains and evaluates per an experiment config given as a JSON string,
/// writing checkpoint, metrics and report files into `out_dir`.
///
/// # Safety
/// `config_json` and `out_dir` must be valid NUL-terminated C strings.
#[no_mangle]
pub unsafe extern "C" fn davi_run_experiment(
    config_json: *const c_char,
    out_dir: *const c_char,
) -> DaviStatus {
    let config = match read_str(config_json) {
        Ok(s) => s,
        Err(st) => return st,
    };
    let dir = match read_str(out_dir) {
        Ok(s) => PathBuf::from(s),
        Err(st) => return st,
    };
    let cfg = match ExperimentConfig::from_json(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match run_experiment_in(&cfg, Some(&dir)) {
        Ok(_) => DaviStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Runs the built-in oracle and identity checks.
#[no_mangle]
pub extern "C" fn davi_check(seed: u64) -> DaviStatus {
    let results = selfcheck::run_all(seed);
    for r in &results {
        if !r.passed {
            set_error(&format!("self-check failed: {} ({})", r.name, r.detail));
            return DaviStatus::SelfCheckFailed;
        }
    }
    DaviStatus::Ok
}

/// A trained restoration model: the amortized map plus the schedule and
/// measurement operator it was trained with.
pub struct DaviModel {
    phi: AmortizedPosterior,
    sched: NoiseSchedule,
    op: LinearOperator,
}

/// Loads a checkpoint written by training. On success `*out` owns the model;
/// release it with [`davi_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn davi_model_load(
    path: *const c_char,
    out: *mut *mut DaviModel,
) -> DaviStatus {
    if out.is_null() {
        set_error("null output pointer");
        return DaviStatus::NullPointer;
    }
    let path = match read_str(path) {
        Ok(s) => s,
        Err(st) => return st,
    };
    match Checkpoint::load(Path::new(path)) {
        Ok(cp) => {
            let model = Box::new(DaviModel {
                phi: cp.phi,
                sched: cp.schedule,
                op: cp.operator,
            });
            *out = Box::into_raw(model);
            DaviStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must be a pointer returned by [`davi_model_load`] that has not
/// been freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn davi_model_free(model: *mut DaviModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Signal dimension of restored outputs (0 for a null model).
///
/// # Safety
/// `model` must be null or a live pointer from [`davi_model_load`].
#[no_mangle]
pub unsafe extern "C" fn davi_model_signal_dim(model: *const DaviModel) -> usize {
    model.as_ref().map(|m| m.op.in_dim()).unwrap_or(0)
}

/// Measurement dimension the model expects (0 for a null model).
///
/// # Safety
/// `model` must be null or a live pointer from [`davi_model_load`].
#[no_mangle]
pub unsafe extern "C" fn davi_model_measurement_dim(model: *const DaviModel) -> usize {
    model.as_ref().map(|m| m.op.out_dim()).unwrap_or(0)
}

/// Number of network evaluations the model has performed so far.
///
/// # Safety
/// `model` must be null or a live pointer from [`davi_model_load`].
#[no_mangle]
pub unsafe extern "C" fn davi_model_nfe(model: *const DaviModel) -> u64 {
    model.as_ref().map(|m| m.phi.nfe()).unwrap_or(0)
}

/// Draws one posterior sample for a measurement in a single network
/// evaluation. `y` holds `y_len` doubles; the restored signal is written to
/// `out` (`out_len` must equal the signal dimension). Distinct seeds give
/// independent posterior samples.
///
/// # Safety
/// `y` and `out` must point to readable/writable buffers of the stated
/// lengths, and `model` must be a live pointer from [`davi_model_load`].
#[no_mangle]
pub unsafe extern "C" fn davi_model_restore(
    model: *const DaviModel,
    y: *const f64,
    y_len: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> DaviStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model");
        return DaviStatus::NullPointer;
    };
    if y.is_null() || out.is_null() {
        set_error("null buffer");
        return DaviStatus::NullPointer;
    }
    if y_len != model.op.out_dim() || out_len != model.op.in_dim() {
        set_error(&format!(
            "expected y_len {} and out_len {}, got {} and {}",
            model.op.out_dim(),
            model.op.in_dim(),
            y_len,
            out_len
        ));
        return DaviStatus::DimensionMismatch;
    }
    let y = std::slice::from_raw_parts(y, y_len);
    if y.iter().any(|v| !v.is_finite()) {
        set_error("measurement contains non-finite values");
        return DaviStatus::NumericError;
    }
    let m = Measurement {
        y: y.to_vec(),
        sigma_y: 0.0,
        noise_kind: NoiseKind::Gaussian,
        operator_id: model.op.id(),
        poisson_clamp_count: 0,
    };
    let mut rng = SeededRng::new(seed);
    match model.phi.sample(&m, &model.op, &model.sched, &mut rng) {
        Ok(sample) => {
            std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&sample);
            DaviStatus::Ok
        }
        Err(e) => fail(e),
    }
}
