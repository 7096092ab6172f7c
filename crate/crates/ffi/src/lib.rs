//! C ABI over the `mfdp` engine.
//!
//! Every fallible function returns an [`MfdpStatus`]; on failure the message
//! is available from [`mfdp_last_error_message`] on the same thread. Images
//! cross the boundary as planar `float` buffers: a mosaic is `height·width`
//! values, an RGB image `3·height·width` values in R, G, B plane order.
//! Handles returned through `out` parameters are owned by the caller and
//! released with [`mfdp_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mfdp::cfa::{demosaic_nn, mosaic, BayerMosaic, RgbImage};
use mfdp::model::{MfdpModel as CoreModel, ModelConfig};
use mfdp::{Error, Precision, Tensor};

/// Result of an API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfdpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was malformed: a non-UTF-8 string, zero or odd extents.
    InvalidArgument = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A file was read but its contents are malformed or fail the checksum.
    Format = 4,
    /// A shape, mode or configuration precondition failed.
    Contract = 5,
    /// A computation produced a non-finite value.
    NonFinite = 6,
    /// The library panicked; this is a bug.
    Panic = 7,
}

/// A model instance. Opaque to C.
pub struct MfdpModel {
    inner: CoreModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MfdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MfdpStatus::Io,
            Error::Format { .. } | Error::CheckpointChecksum { .. } | Error::CheckpointVersion { .. } => MfdpStatus::Format,
            Error::Contract { .. } | Error::Config { .. } | Error::ConfigMismatch(_) => MfdpStatus::Contract,
            Error::NonFinite { .. } | Error::Diverged { .. } => MfdpStatus::NonFinite,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MfdpStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(detail: impl Into<String>) -> Failure {
    Failure(MfdpStatus::InvalidArgument, detail.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MfdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MfdpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            MfdpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

fn extents(height: usize, width: usize) -> Result<usize, Failure> {
    if height == 0 || width == 0 || height % 2 != 0 || width % 2 != 0 {
        return Err(invalid(format!("extents {height}×{width} must be even and nonzero")));
    }
    height.checked_mul(width).filter(|n| n.checked_mul(3).is_some()).ok_or_else(|| invalid("extents overflow"))
}

unsafe fn read_bayer(p: *const f32, height: usize, width: usize) -> Result<BayerMosaic, Failure> {
    let n = extents(height, width)?;
    if p.is_null() {
        return Err(null("bayer"));
    }
    let data = std::slice::from_raw_parts(p, n).iter().map(|&v| f64::from(v)).collect();
    Ok(BayerMosaic::new(Tensor::new(&[1, height, width], data)?)?)
}

unsafe fn write_out(t: &Tensor, out: *mut f32) {
    let dst = std::slice::from_raw_parts_mut(out, t.numel());
    for (d, &v) in dst.iter_mut().zip(t.data()) {
        *d = v as f32;
    }
}

unsafe fn model_ref<'a>(model: *const MfdpModel) -> Result<&'a MfdpModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn store_handle(out: *mut *mut MfdpModel, inner: CoreModel) {
    *out = Box::into_raw(Box::new(MfdpModel { inner }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message length
/// excluding the terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mfdp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a freshly initialised model from a named preset (`default`,
/// `mfdp1`, `mfdp2`, `mfdp3`, `tiny`). `joint_denoise` selects the variant
/// that takes a noise level.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_new(
    preset: *const c_char,
    joint_denoise: bool,
    seed: u64,
    out: *mut *mut MfdpModel,
) -> MfdpStatus {
    guard(|| {
        let name = str_arg(preset, "preset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = ModelConfig::preset(name)?;
        if joint_denoise {
            cfg.task = mfdp::cfa::Task::JointDenoise;
        }
        store_handle(out, CoreModel::build(cfg, seed)?);
        Ok(())
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_load(path: *const c_char, out: *mut *mut MfdpModel) -> MfdpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store_handle(out, CoreModel::load(Path::new(path), None)?);
        Ok(())
    })
}

/// Saves a model checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_save(model: *const MfdpModel, path: *const c_char) -> MfdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = str_arg(path, "path")?;
        m.inner.save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_free(model: *mut MfdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable scalars.
///
/// # Safety
/// `model` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_param_count(model: *const MfdpModel, out: *mut usize) -> MfdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.inner.param_count();
        Ok(())
    })
}

/// Whether the model expects a noise level.
///
/// # Safety
/// `model` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_is_joint_denoise(model: *const MfdpModel, out: *mut bool) -> MfdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.inner.config().task == mfdp::cfa::Task::JointDenoise;
        Ok(())
    })
}

/// Zeroes the prediction head so the model reproduces nearest-neighbour
/// demosaicking exactly.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_zero_residual(model: *mut MfdpModel) -> MfdpStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        m.inner.zero_residual();
        Ok(())
    })
}

/// Demosaics a `height×width` RGGB mosaic into `rgb_out`. `sigma` is the
/// noise level in [0,1] units for joint-denoise models and must be negative
/// for plain demosaicking models. `high_precision` selects 64-bit arithmetic.
///
/// # Safety
/// `bayer` must hold `height·width` floats, `rgb_out` room for `3·height·width`.
#[no_mangle]
pub unsafe extern "C" fn mfdp_model_demosaic(
    model: *const MfdpModel,
    bayer: *const f32,
    height: usize,
    width: usize,
    sigma: f32,
    high_precision: bool,
    rgb_out: *mut f32,
) -> MfdpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = read_bayer(bayer, height, width)?;
        if rgb_out.is_null() {
            return Err(null("rgb_out"));
        }
        let sigma = (sigma >= 0.0).then_some(f64::from(sigma));
        let precision = if high_precision { Precision::High } else { Precision::Standard };
        let y = m.inner.demosaic(&x, sigma, precision)?;
        write_out(y.tensor(), rgb_out);
        Ok(())
    })
}

/// Nearest-neighbour demosaicking.
///
/// # Safety
/// `bayer` must hold `height·width` floats, `rgb_out` room for `3·height·width`.
#[no_mangle]
pub unsafe extern "C" fn mfdp_demosaic_nn(bayer: *const f32, height: usize, width: usize, rgb_out: *mut f32) -> MfdpStatus {
    guard(|| {
        let x = read_bayer(bayer, height, width)?;
        if rgb_out.is_null() {
            return Err(null("rgb_out"));
        }
        write_out(demosaic_nn(&x).tensor(), rgb_out);
        Ok(())
    })
}

/// Samples a planar RGB image through the RGGB filter.
///
/// # Safety
/// `rgb` must hold `3·height·width` floats, `bayer_out` room for `height·width`.
#[no_mangle]
pub unsafe extern "C" fn mfdp_mosaic(rgb: *const f32, height: usize, width: usize, bayer_out: *mut f32) -> MfdpStatus {
    guard(|| {
        let n = extents(height, width)?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if bayer_out.is_null() {
            return Err(null("bayer_out"));
        }
        let data = std::slice::from_raw_parts(rgb, 3 * n).iter().map(|&v| f64::from(v)).collect();
        let img = RgbImage::new(Tensor::new(&[3, height, width], data)?)?;
        write_out(mosaic(&img).tensor(), bayer_out);
        Ok(())
    })
}
