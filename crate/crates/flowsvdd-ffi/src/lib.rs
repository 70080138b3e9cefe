//! C ABI over the flowsvdd core: load or train a model, score batches,
//! query its geometry. Handles are opaque; every call returns a status code
//! and the last error message is retrievable per thread.
//!
//! Memory rules: every `FsvddModel` produced by `fsvdd_model_load` or
//! `fsvdd_train` must be released with `fsvdd_model_free`. Strings returned
//! by `fsvdd_last_error` are borrowed from thread-local storage and valid
//! until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use flowsvdd::flow::FlowModel;
use flowsvdd::model_io;
use flowsvdd::pipeline;
use flowsvdd::svdd::{self, SvddHead};
use flowsvdd::tensor::Tensor;

/// Status code for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsvddStatus {
    Ok = 0,
    /// A pointer argument that must not be null was null.
    NullArg = 1,
    /// File could not be read or written.
    Io = 2,
    /// File exists but does not parse as a model or manifest.
    Format = 3,
    /// Input dimensions disagree with the model.
    Dimension = 4,
    /// Training failed; see `fsvdd_last_error`.
    Train = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Message for the most recent failure on this thread, or null if none.
/// Borrowed; do not free.
#[no_mangle]
pub extern "C" fn fsvdd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.as_ptr(),
        None => ptr::null(),
    })
}

/// Opaque trained model: flow, hypersphere, provenance.
pub struct FsvddModel {
    model: FlowModel,
    head: SvddHead,
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, FsvddStatus> {
    if ptr.is_null() {
        set_error("null path argument".into());
        return Err(FsvddStatus::NullArg);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            Err(FsvddStatus::Format)
        }
    }
}

/// Load a model from its JSON file into `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_model_load(
    path: *const c_char,
    out: *mut *mut FsvddModel,
) -> FsvddStatus {
    if out.is_null() {
        set_error("null output argument".into());
        return FsvddStatus::NullArg;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match model_io::load_model(path) {
        Ok((model, head, _)) => {
            *out = Box::into_raw(Box::new(FsvddModel { model, head }));
            FsvddStatus::Ok
        }
        Err(e @ model_io::ModelIoError::Io { .. }) => {
            set_error(e.to_string());
            FsvddStatus::Io
        }
        Err(e) => {
            set_error(e.to_string());
            FsvddStatus::Format
        }
    }
}

/// Train from a run manifest (same semantics as `flowsvdd train`) and hand
/// back the trained model. Artifacts are still written to the manifest's
/// output directory.
///
/// # Safety
/// `manifest_path` must be a valid NUL-terminated string; `out` must be a
/// valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_train(
    manifest_path: *const c_char,
    out: *mut *mut FsvddModel,
) -> FsvddStatus {
    if out.is_null() {
        set_error("null output argument".into());
        return FsvddStatus::NullArg;
    }
    let path = match path_from(manifest_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let artifacts = match pipeline::cmd_train(path, None) {
        Ok(a) => a,
        Err(e) => {
            set_error(e.to_string());
            return FsvddStatus::Train;
        }
    };
    match model_io::load_model(&artifacts.model_path) {
        Ok((model, head, _)) => {
            *out = Box::into_raw(Box::new(FsvddModel { model, head }));
            FsvddStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            FsvddStatus::Io
        }
    }
}

/// Release a model. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer previously returned by
/// `fsvdd_model_load`/`fsvdd_train` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_model_free(model: *mut FsvddModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension D of the model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_model_dim(model: *const FsvddModel) -> usize {
    match model.as_ref() {
        Some(m) => m.model.input_dim,
        None => 0,
    }
}

/// Decision radius R in normalized latent space, or NaN for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_model_radius(model: *const FsvddModel) -> f64 {
    match model.as_ref() {
        Some(m) => m.head.radius(),
        None => f64::NAN,
    }
}

/// Score `n` rows of `d` features (row-major `xs`, length n*d). Writes the
/// center distance of each row into `out_scores` (length n) and, when
/// `out_flags` is non-null, 1 for outliers / 0 for inliers (length n).
///
/// # Safety
/// `model` must be a live handle; `xs` must point to `n * d` doubles;
/// `out_scores` to `n` doubles; `out_flags` must be null or point to
/// `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn fsvdd_score(
    model: *const FsvddModel,
    xs: *const f64,
    n: usize,
    d: usize,
    out_scores: *mut f64,
    out_flags: *mut u8,
) -> FsvddStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model".into());
            return FsvddStatus::NullArg;
        }
    };
    if xs.is_null() || out_scores.is_null() {
        set_error("null data argument".into());
        return FsvddStatus::NullArg;
    }
    if d != m.model.input_dim {
        set_error(format!("input dim {} does not match model dim {}", d, m.model.input_dim));
        return FsvddStatus::Dimension;
    }
    let data = std::slice::from_raw_parts(xs, n * d);
    let x = match Tensor::matrix(n, d, data.to_vec()) {
        Ok(t) => t,
        Err(e) => {
            set_error(e.to_string());
            return FsvddStatus::Format;
        }
    };
    match svdd::score(&x, &m.model, &m.head) {
        Ok(s) => {
            let scores = std::slice::from_raw_parts_mut(out_scores, n);
            scores.copy_from_slice(&s.distances);
            if !out_flags.is_null() {
                let flags = std::slice::from_raw_parts_mut(out_flags, n);
                for (f, o) in flags.iter_mut().zip(&s.outlier) {
                    *f = u8::from(*o);
                }
            }
            FsvddStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            FsvddStatus::Dimension
        }
    }
}
