//! C ABI over the sarseg library.
//!
//! The surface is deliberately small: load a trained checkpoint into an
//! opaque handle, run single-image prediction over raw buffers, and generate
//! synthetic test scenes. Every call returns a [`SarsegStatus`]; the last
//! failure message is kept per thread and readable via
//! [`sarseg_last_error_message`].
//!
//! Images cross the boundary as row-major `double` buffers of `height*width`
//! intensities in [0,1]; masks as `uint8_t` buffers of 0/1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sarseg::data::{scene_rng, synth_scene, SceneSpec};
use sarseg::error::Error;
use sarseg::fusion::binarize;
use sarseg::model::FusionNet;
use sarseg::tensor::{Shape, Tensor};
use sarseg::train::load_checkpoint;

/// Status code returned by every API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SarsegStatus {
    /// Success.
    Ok = 0,
    /// A pointer was null or an argument value was out of range.
    InvalidArgument = 1,
    /// Missing or malformed files, or shape mismatches.
    DataError = 2,
    /// Non-finite values encountered.
    NumericError = 3,
    /// An unexpected internal failure.
    InternalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: SarsegStatus, msg: &str) -> SarsegStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> SarsegStatus {
    match err {
        Error::Config(_) => SarsegStatus::InvalidArgument,
        Error::Numeric(_) => SarsegStatus::NumericError,
        _ => SarsegStatus::DataError,
    }
}

/// Shields the C boundary from panics.
fn guarded(body: impl FnOnce() -> SarsegStatus) -> SarsegStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(SarsegStatus::InternalError, "internal panic"),
    }
}

/// Opaque handle to a loaded segmentation model.
pub struct SarsegModel {
    net: FusionNet,
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sarseg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sarseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint directory (manifest.json + weights.bin) into a model
/// handle. On success writes the handle to `out_model`; the caller owns it
/// and must release it with [`sarseg_model_free`].
///
/// # Safety
/// `checkpoint_dir` must be a valid NUL-terminated string and `out_model` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sarseg_model_load(
    checkpoint_dir: *const c_char,
    out_model: *mut *mut SarsegModel,
) -> SarsegStatus {
    guarded(|| {
        if checkpoint_dir.is_null() || out_model.is_null() {
            return fail(SarsegStatus::InvalidArgument, "null pointer argument");
        }
        let dir = match unsafe { CStr::from_ptr(checkpoint_dir) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(SarsegStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match load_checkpoint(Path::new(dir)) {
            Ok((net, _)) => {
                unsafe {
                    *out_model = Box::into_raw(Box::new(SarsegModel { net }));
                }
                SarsegStatus::Ok
            }
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// Releases a model handle. A null handle is a no-op.
///
/// # Safety
/// `model` must be a handle produced by [`sarseg_model_load`], released at
/// most once.
#[no_mangle]
pub unsafe extern "C" fn sarseg_model_free(model: *mut SarsegModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Spatial divisor the model requires: input height and width must be
/// multiples of this. Returns 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle from [`sarseg_model_load`].
#[no_mangle]
pub unsafe extern "C" fn sarseg_model_input_divisor(model: *const SarsegModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.net.cfg.input_divisor()
}

/// Runs one image through the model.
///
/// `image` is a row-major `height*width` buffer of intensities in [0,1].
/// `prob_out` (nullable) receives the per-pixel spill probabilities;
/// `mask_out` (nullable) receives the thresholded 0/1 mask. Both outputs are
/// `height*width` long.
///
/// # Safety
/// All non-null pointers must reference buffers of `height*width` elements.
#[no_mangle]
pub unsafe extern "C" fn sarseg_predict(
    model: *const SarsegModel,
    image: *const f64,
    height: usize,
    width: usize,
    threshold: f64,
    prob_out: *mut f64,
    mask_out: *mut u8,
) -> SarsegStatus {
    guarded(|| {
        if model.is_null() || image.is_null() {
            return fail(SarsegStatus::InvalidArgument, "null pointer argument");
        }
        if height == 0 || width == 0 {
            return fail(SarsegStatus::InvalidArgument, "empty image");
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return fail(
                SarsegStatus::InvalidArgument,
                "threshold must lie strictly in (0,1)",
            );
        }
        let net = &unsafe { &*model }.net;
        let pixels = unsafe { std::slice::from_raw_parts(image, height * width) };
        let tensor = match Tensor::from_vec(Shape::new(1, 1, height, width), pixels.to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(status_of(&e), &e.to_string()),
        };
        let prob = match net.forward(&tensor) {
            Ok((p, _)) => p,
            Err(e) => return fail(status_of(&e), &e.to_string()),
        };
        if !prob_out.is_null() {
            unsafe {
                ptr::copy_nonoverlapping(prob.data().as_ptr(), prob_out, height * width);
            }
        }
        if !mask_out.is_null() {
            let mask = binarize(&prob, threshold);
            let out = unsafe { std::slice::from_raw_parts_mut(mask_out, height * width) };
            for (dst, &v) in out.iter_mut().zip(mask.data()) {
                *dst = if v == 1.0 { 1 } else { 0 };
            }
        }
        SarsegStatus::Ok
    })
}

/// Generates one synthetic speckled scene with its ground-truth mask, using
/// the default generator parameters at the given tile size and seed. Output
/// buffers are `size*size` long; either may be null.
///
/// # Safety
/// Non-null output pointers must reference buffers of `size*size` elements.
#[no_mangle]
pub unsafe extern "C" fn sarseg_synth_scene(
    size: usize,
    seed: u64,
    image_out: *mut f64,
    mask_out: *mut u8,
) -> SarsegStatus {
    guarded(|| {
        let spec = SceneSpec {
            size,
            seed,
            ..SceneSpec::default()
        };
        if let Err(e) = spec.validate() {
            return fail(SarsegStatus::InvalidArgument, &e.to_string());
        }
        let (image, mask) = match synth_scene(&spec, &mut scene_rng(&spec, 0)) {
            Ok(pair) => pair,
            Err(e) => return fail(status_of(&e), &e.to_string()),
        };
        if !image_out.is_null() {
            unsafe {
                ptr::copy_nonoverlapping(image.data().as_ptr(), image_out, size * size);
            }
        }
        if !mask_out.is_null() {
            let out = unsafe { std::slice::from_raw_parts_mut(mask_out, size * size) };
            for (dst, &v) in out.iter_mut().zip(mask.data()) {
                *dst = if v == 1.0 { 1 } else { 0 };
            }
        }
        SarsegStatus::Ok
    })
}
