//! C ABI over landmark-rl: phantom volumes, trained models and landmark search.
//!
//! Every function returns an [`LrStatus`]; on failure a message is kept per
//! thread and can be copied out with [`lr_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use landmark_rl::evaluation::{pck, run_inference};
use landmark_rl::nn::network::{NetConfig, QNetworkParams};
use landmark_rl::pose_graph::NUM_LANDMARKS;
use landmark_rl::trainer::load_model;
use landmark_rl::volume::{generate_phantom, load_volume, save_volume, LabeledVolume, PhantomSpec, DEFAULT_START_FRACTION};
use landmark_rl::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Runtime = 5,
    Panic = 6,
}

/// A labelled volume.
pub struct LrVolume {
    inner: LabeledVolume,
}

/// Trained Q-network parameters.
pub struct LrModel {
    inner: QNetworkParams,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LrStatus {
    match e {
        Error::Config(_) | Error::SpecInfeasible(_) | Error::ShapeMismatch(_) => LrStatus::InvalidArgument,
        Error::Format(_) => LrStatus::Format,
        Error::Io(_) => LrStatus::Io,
        _ => LrStatus::Runtime,
    }
}

struct Fail(LrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LrStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            LrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LrStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Number of landmarks; position arrays hold `3 * lr_num_landmarks()` values.
#[no_mangle]
pub extern "C" fn lr_num_landmarks() -> usize {
    NUM_LANDMARKS
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lr_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Synthesizes a phantom of `nx*ny*nz` voxels at isotropic `spacing_mm`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_generate(
    nx: usize,
    ny: usize,
    nz: usize,
    spacing_mm: f64,
    seed: u64,
    out: *mut *mut LrVolume,
) -> LrStatus {
    guard(|| {
        let spec = PhantomSpec {
            dims: [nx, ny, nz],
            spacing_mm: [spacing_mm; 3],
            ..PhantomSpec::default()
        };
        spec.validate()?;
        let v = generate_phantom(&spec, seed)?;
        put(out, LrVolume { inner: v })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_load(path: *const c_char, out: *mut *mut LrVolume) -> LrStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, LrVolume { inner: load_volume(p)? })
    })
}

/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_save(vol: *const LrVolume, path: *const c_char) -> LrStatus {
    guard(|| {
        let v = vol.as_ref().ok_or_else(|| null("volume"))?;
        save_volume(&v.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Writes the grid size to `dims[3]` and the voxel spacing to `spacing_mm[3]`; either may be null.
///
/// # Safety
/// `vol` must be a live handle; non-null outputs must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_shape(vol: *const LrVolume, dims: *mut usize, spacing_mm: *mut f64) -> LrStatus {
    guard(|| {
        let v = &vol.as_ref().ok_or_else(|| null("volume"))?.inner;
        for i in 0..3 {
            if !dims.is_null() {
                *dims.add(i) = v.dims[i];
            }
            if !spacing_mm.is_null() {
                *spacing_mm.add(i) = v.spacing_mm[i];
            }
        }
        Ok(())
    })
}

/// Ground-truth landmark coordinates in voxels, `x, y, z` per landmark.
///
/// # Safety
/// `vol` must be a live handle and `out` must hold `3 * lr_num_landmarks()` values.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_landmarks(vol: *const LrVolume, out: *mut f64) -> LrStatus {
    guard(|| {
        let v = &vol.as_ref().ok_or_else(|| null("volume"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        for (k, p) in v.landmarks.iter().enumerate() {
            for i in 0..3 {
                *out.add(3 * k + i) = p[i];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lr_volume_free(vol: *mut LrVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Loads the online network of a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lr_model_load(path: *const c_char, out: *mut *mut LrModel) -> LrStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, LrModel { inner: load_model(p)? })
    })
}

/// Randomly initialised network from a preset name (`paper`, `desk` or `tiny`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lr_model_init(preset: *const c_char, seed: u64, out: *mut *mut LrModel) -> LrStatus {
    guard(|| {
        if preset.is_null() {
            return Err(null("preset"));
        }
        let name = CStr::from_ptr(preset)
            .to_str()
            .map_err(|_| Fail(LrStatus::InvalidArgument, "preset is not UTF-8".into()))?;
        let cfg = NetConfig::preset(name)?;
        put(out, LrModel { inner: QNetworkParams::init(&cfg, seed)? })
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lr_model_free(model: *mut LrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the greedy multi-agent search and writes the final voxel positions,
/// `x, y, z` per landmark.
///
/// # Safety
/// Handles must be live and `out` must hold `3 * lr_num_landmarks()` values.
#[no_mangle]
pub unsafe extern "C" fn lr_locate(
    model: *const LrModel,
    vol: *const LrVolume,
    max_steps: usize,
    seed: u64,
    out: *mut i64,
) -> LrStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let v = &vol.as_ref().ok_or_else(|| null("volume"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let res = run_inference(v, m, max_steps, seed, DEFAULT_START_FRACTION)?;
        for (k, p) in res.finals.iter().enumerate() {
            for i in 0..3 {
                *out.add(3 * k + i) = p[i];
            }
        }
        Ok(())
    })
}

/// Fraction of landmarks of one volume whose prediction lies within
/// `threshold_mm` of the ground truth, in percent.
///
/// # Safety
/// `vol` must be a live handle and `pred` must hold `3 * lr_num_landmarks()` values.
#[no_mangle]
pub unsafe extern "C" fn lr_pck(vol: *const LrVolume, pred: *const i64, threshold_mm: f64, out: *mut f64) -> LrStatus {
    guard(|| {
        let v = &vol.as_ref().ok_or_else(|| null("volume"))?.inner;
        if pred.is_null() || out.is_null() {
            return Err(null("pred or out"));
        }
        if !(threshold_mm >= 0.0) {
            return Err(Fail(LrStatus::InvalidArgument, "threshold must be >= 0".into()));
        }
        let mut preds = [[0.0; 3]; NUM_LANDMARKS];
        for (k, p) in preds.iter_mut().enumerate() {
            for i in 0..3 {
                p[i] = *pred.add(3 * k + i) as f64;
            }
        }
        *out = pck(&[preds], &[v.landmarks], &[v.spacing_mm], threshold_mm)?.micro;
        Ok(())
    })
}
