//! C interface to trained checkpoints: load a model, encode images into
//! `(z, θ̂, τ̂)` and render codes back into pixels.
//!
//! Every function returns an [`IrlStatus`]; on failure the message is
//! available from [`irl_last_error`] on the same thread. Images are flat
//! `f64` arrays in channel-major order (`channels × side × side`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use invariant_inr::checkpoint::{load_checkpoint, CheckpointError};
use invariant_inr::geometry::{DiscreteImage, Pose};
use invariant_inr::models::Model;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidPath = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    ShapeMismatch = 5,
    Internal = 6,
}

/// Opaque handle to a loaded model.
pub struct IrlModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: IrlStatus, msg: impl Into<String>) -> IrlStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> IrlStatus) -> IrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(IrlStatus::Internal, "internal panic"),
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn irl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irl_model_load(path: *const c_char, out: *mut *mut IrlModel) -> IrlStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(IrlStatus::NullPointer, "path and out must be non-null");
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let Ok(path) = unsafe { CStr::from_ptr(path) }.to_str() else {
            return fail(IrlStatus::InvalidPath, "path is not valid UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ck) => {
                let handle = Box::new(IrlModel { model: ck.trainer.model });
                // SAFETY: `out` is non-null and writable per the contract.
                unsafe { *out = Box::into_raw(handle) };
                IrlStatus::Ok
            }
            Err(e @ CheckpointError::Io { .. }) => fail(IrlStatus::Io, e.to_string()),
            Err(e) => fail(IrlStatus::CorruptCheckpoint, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`irl_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn irl_model_free(model: *mut IrlModel) {
    if !model.is_null() {
        // SAFETY: allocated by `irl_model_load` via Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Writes the latent size, channel count and image side.
///
/// # Safety
/// `model` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn irl_model_dims(
    model: *const IrlModel,
    latent_dim: *mut usize,
    channels: *mut usize,
    side: *mut usize,
) -> IrlStatus {
    // SAFETY: caller passes a live handle or null.
    let Some(m) = (unsafe { model.as_ref() }) else {
        return fail(IrlStatus::NullPointer, "model is null");
    };
    let cfg = m.model.config();
    for (ptr, v) in [(latent_dim, cfg.latent_dim), (channels, cfg.channels), (side, cfg.side)] {
        if !ptr.is_null() {
            // SAFETY: non-null output pointers are writable per the contract.
            unsafe { *ptr = v };
        }
    }
    IrlStatus::Ok
}

/// Encodes one image. `z_out` receives `latent_dim` values and `pose_out`
/// three values `(θ̂, τ̂x, τ̂y)`.
///
/// # Safety
/// `pixels` must hold `pixels_len` values, `z_out` `z_len` values and
/// `pose_out` three values.
#[no_mangle]
pub unsafe extern "C" fn irl_model_encode(
    model: *const IrlModel,
    pixels: *const f64,
    pixels_len: usize,
    z_out: *mut f64,
    z_len: usize,
    pose_out: *mut f64,
) -> IrlStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail(IrlStatus::NullPointer, "model is null");
        };
        if pixels.is_null() || z_out.is_null() || pose_out.is_null() {
            return fail(IrlStatus::NullPointer, "buffers must be non-null");
        }
        let cfg = m.model.config();
        let expected = cfg.channels * cfg.side * cfg.side;
        if pixels_len != expected || z_len != cfg.latent_dim {
            return fail(
                IrlStatus::ShapeMismatch,
                format!(
                    "expected {expected} pixels and {} latent slots, got {pixels_len} and {z_len}",
                    cfg.latent_dim
                ),
            );
        }
        // SAFETY: lengths checked against the caller's stated sizes.
        let px = unsafe { std::slice::from_raw_parts(pixels, pixels_len) }.to_vec();
        let img = match DiscreteImage::new(cfg.channels, cfg.side, px) {
            Ok(i) => i,
            Err(e) => return fail(IrlStatus::ShapeMismatch, e.to_string()),
        };
        match m.model.encode(&img) {
            Ok(code) => {
                // SAFETY: `z_out` holds `z_len` slots and `pose_out` three.
                unsafe {
                    std::slice::from_raw_parts_mut(z_out, z_len).copy_from_slice(&code.z);
                    std::slice::from_raw_parts_mut(pose_out, 3).copy_from_slice(&[
                        code.theta_hat,
                        code.tau_hat[0],
                        code.tau_hat[1],
                    ]);
                }
                IrlStatus::Ok
            }
            Err(e) => fail(IrlStatus::ShapeMismatch, e.to_string()),
        }
    })
}

/// Renders code `z` under pose `(theta, tau_x, tau_y)`; the identity pose
/// gives the canonical image. `out` receives `channels × side²` values.
///
/// # Safety
/// `z` must hold `z_len` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn irl_model_render(
    model: *const IrlModel,
    z: *const f64,
    z_len: usize,
    theta: f64,
    tau_x: f64,
    tau_y: f64,
    out: *mut f64,
    out_len: usize,
) -> IrlStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail(IrlStatus::NullPointer, "model is null");
        };
        if z.is_null() || out.is_null() {
            return fail(IrlStatus::NullPointer, "buffers must be non-null");
        }
        let cfg = m.model.config();
        let expected = cfg.channels * cfg.side * cfg.side;
        if z_len != cfg.latent_dim || out_len != expected {
            return fail(
                IrlStatus::ShapeMismatch,
                format!(
                    "expected {} latent values and {expected} output slots, got {z_len} and {out_len}",
                    cfg.latent_dim
                ),
            );
        }
        // SAFETY: lengths checked against the caller's stated sizes.
        let zs = unsafe { std::slice::from_raw_parts(z, z_len) };
        match m.model.render_code(zs, &Pose::new(theta, [tau_x, tau_y])) {
            Ok(img) => {
                // SAFETY: `out` holds `out_len` slots.
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(img.pixels());
                IrlStatus::Ok
            }
            Err(e) => fail(IrlStatus::Internal, e.to_string()),
        }
    })
}
