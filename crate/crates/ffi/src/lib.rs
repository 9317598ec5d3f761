//! C ABI for the `bimodal-cl` engine.
//!
//! Every object crosses the boundary as an opaque pointer that the caller
//! releases with the matching `*_free` function. Fallible functions return a
//! [`BclStatus`] and write results through out-pointers; on failure the
//! message is available from [`bcl_last_error`] on the same thread. Panics
//! never unwind into the caller: they are caught and reported as
//! [`BclStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bimodal_cl::cli::{build_stream, ExperimentConfig};
use bimodal_cl::data::{self, Dataset};
use bimodal_cl::gdro::{dro_objective, dro_weights};
use bimodal_cl::runner::{self, AccuracyMatrix};
use bimodal_cl::{Error, ParamVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BclStatus {
    Ok = 0,
    /// Null pointer, non-UTF-8 string or out-of-range index.
    InvalidArgument = 1,
    InvalidConfig = 2,
    DimensionMismatch = 3,
    ClassOutOfRange = 4,
    MalformedDataset = 5,
    Io = 6,
    Divergence = 7,
    /// Any other engine error (empty inputs, non-finite values and so on).
    Numeric = 8,
    Panic = 9,
}

/// A synthetic or loaded dataset.
pub struct BclDataset(Dataset);

/// Trained encoder parameters.
pub struct BclModel(ParamVector);

/// The outcome of one continual run.
pub struct BclRun {
    matrix: AccuracyMatrix,
    params: ParamVector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(BclStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig(_) => BclStatus::InvalidConfig,
            Error::DimensionMismatch { .. } => BclStatus::DimensionMismatch,
            Error::ClassOutOfRange { .. } => BclStatus::ClassOutOfRange,
            Error::MalformedFile(_) | Error::VersionMismatch { .. } => BclStatus::MalformedDataset,
            Error::Io { .. } => BclStatus::Io,
            Error::Divergence { .. } => BclStatus::Divergence,
            _ => BclStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(BclStatus::InvalidArgument, message.into())
}

/// Runs `f`, records any failure or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BclStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {message}"));
            BclStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// A slice from a pointer and length. A null pointer is accepted only when
/// the length is zero.
unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn as_mut_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bcl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bcl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------------------
// Datasets

/// Generates a Gaussian-cluster dataset (see `bimodal_cl::data::gen_synthetic`).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_generate(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
    out: *mut *mut BclDataset,
) -> BclStatus {
    guard(|| {
        let ds = data::gen_synthetic(num_classes, per_class, input_dim, separation, noise, seed)?;
        write_out(out, Box::into_raw(Box::new(BclDataset(ds))))
    })
}

/// Reads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_load(path: *const c_char, out: *mut *mut BclDataset) -> BclStatus {
    guard(|| {
        let ds = data::load(as_str(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(BclDataset(ds))))
    })
}

/// Writes a dataset file.
///
/// # Safety
/// `dataset` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_save(dataset: *const BclDataset, path: *const c_char) -> BclStatus {
    guard(|| {
        let ds = as_ref(dataset, "dataset")?;
        data::save(&ds.0, as_str(path, "path")?)?;
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_len(dataset: *const BclDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.samples.len())
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_input_dim(dataset: *const BclDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.input_dim)
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_num_classes(dataset: *const BclDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_classes)
}

/// Releases a dataset. Null is a no-op.
///
/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcl_dataset_free(dataset: *mut BclDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// ---------------------------------------------------------------------------
// Runs

/// Splits `dataset` and trains one continual run as described by the TOML
/// experiment config `config_toml` (`[split]` and `[run]` sections; `data`
/// and `[output]` are ignored).
///
/// # Safety
/// `dataset` must be a live handle, `config_toml` a NUL-terminated string and
/// `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bcl_run(dataset: *const BclDataset, config_toml: *const c_char, out: *mut *mut BclRun) -> BclStatus {
    guard(|| {
        let ds = as_ref(dataset, "dataset")?;
        let cfg = ExperimentConfig::parse(as_str(config_toml, "config")?)?;
        cfg.validate()?;
        let bytes = data::encode(&ds.0)?;
        let (stream, _) = build_stream(&cfg, &bytes).map_err(|e| Failure::from(e.error))?;
        let out_run = runner::run(&stream, &cfg.run)?;
        write_out(out, Box::into_raw(Box::new(BclRun { matrix: out_run.matrix, params: out_run.params })))
    })
}

/// Number of tasks in the run, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_num_tasks(run: *const BclRun) -> usize {
    run.as_ref().map_or(0, |r| r.matrix.num_tasks())
}

/// Accuracy on task `task_b`'s test split after training stage `stage_t`
/// (both zero-based, `task_b <= stage_t`).
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_accuracy(run: *const BclRun, stage_t: usize, task_b: usize, out: *mut f64) -> BclStatus {
    guard(|| {
        let r = as_ref(run, "run")?;
        let a = r
            .matrix
            .entry(stage_t, task_b)
            .ok_or_else(|| invalid(format!("no accuracy entry ({stage_t}, {task_b})")))?;
        write_out(out, a)
    })
}

/// Aggregate accuracy after the last stage.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_final_accuracy(run: *const BclRun, out: *mut f64) -> BclStatus {
    guard(|| write_out(out, as_ref(run, "run")?.matrix.final_aggregate()))
}

/// Copies the aggregate accuracy after each stage into `buf`, which must
/// hold exactly `bcl_run_num_tasks(run)` values.
///
/// # Safety
/// `run` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_curve(run: *const BclRun, buf: *mut f64, len: usize) -> BclStatus {
    guard(|| {
        let curve = as_ref(run, "run")?.matrix.curve();
        if curve.len() != len {
            return Err(Failure::from(Error::DimensionMismatch { what: "curve buffer", expected: curve.len(), actual: len }));
        }
        as_mut_slice(buf, len, "buf")?.copy_from_slice(&curve);
        Ok(())
    })
}

/// Extracts a copy of the final parameters as a model handle.
///
/// # Safety
/// `run` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_model(run: *const BclRun, out: *mut *mut BclModel) -> BclStatus {
    guard(|| {
        let params = as_ref(run, "run")?.params.clone();
        write_out(out, Box::into_raw(Box::new(BclModel(params))))
    })
}

/// Releases a run. Null is a no-op.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcl_run_free(run: *mut BclRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

// ---------------------------------------------------------------------------
// Models

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcl_model_param_len(model: *const BclModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.len())
}

/// Copies the flat parameter vector into `buf`, which must hold exactly
/// `bcl_model_param_len(model)` values.
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bcl_model_params(model: *const BclModel, buf: *mut f64, len: usize) -> BclStatus {
    guard(|| {
        let values = as_ref(model, "model")?.0.values();
        if values.len() != len {
            return Err(Failure::from(Error::DimensionMismatch { what: "parameter buffer", expected: values.len(), actual: len }));
        }
        as_mut_slice(buf, len, "buf")?.copy_from_slice(values);
        Ok(())
    })
}

/// Cosine similarity between the embeddings of input `x` and class `class_id`.
///
/// # Safety
/// `model` must be a live handle, `x` valid for `x_len` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bcl_model_similarity(
    model: *const BclModel,
    x: *const f64,
    x_len: usize,
    class_id: u32,
    out: *mut f64,
) -> BclStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.0.pair_similarity(as_slice(x, x_len, "x")?, class_id)?)
    })
}

/// Most similar class among `candidates` (ties go to the smallest id).
///
/// # Safety
/// `model` must be a live handle, `x` and `candidates` valid for their
/// lengths and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bcl_model_predict(
    model: *const BclModel,
    x: *const f64,
    x_len: usize,
    candidates: *const u32,
    num_candidates: usize,
    out: *mut u32,
) -> BclStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let c = as_slice(candidates, num_candidates, "candidates")?;
        write_out(out, m.0.predict(as_slice(x, x_len, "x")?, c)?)
    })
}

/// Releases a model. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bcl_model_free(model: *mut BclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Distributionally robust weighting

fn check_lambda(h: &[f64], lambda: f64) -> Result<(), Failure> {
    if h.is_empty() {
        return Err(Failure::from(Error::Empty("losses")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Failure::from(Error::InvalidConfig(format!("lambda must be positive and finite, got {lambda}"))));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Failure::from(Error::NonFinite("losses")));
    }
    Ok(())
}

/// Worst-case weights `softmax(h / lambda)` over `k` per-class losses,
/// written to `out` (length `k`).
///
/// # Safety
/// `h` must be valid for `k` reads and `out` for `k` writes.
#[no_mangle]
pub unsafe extern "C" fn bcl_dro_weights(h: *const f64, k: usize, lambda: f64, out: *mut f64) -> BclStatus {
    guard(|| {
        let h = as_slice(h, k, "h")?;
        check_lambda(h, lambda)?;
        as_mut_slice(out, k, "out")?.copy_from_slice(&dro_weights(h, lambda));
        Ok(())
    })
}

/// KL-regularized worst-case objective `lambda * log mean exp(h / lambda)`.
///
/// # Safety
/// `h` must be valid for `k` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bcl_dro_objective(h: *const f64, k: usize, lambda: f64, out: *mut f64) -> BclStatus {
    guard(|| {
        let h = as_slice(h, k, "h")?;
        check_lambda(h, lambda)?;
        write_out(out, dro_objective(h, lambda))
    })
}
