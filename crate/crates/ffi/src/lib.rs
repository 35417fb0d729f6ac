//! C ABI over the `ecgssl` library.
//!
//! Conventions:
//! - Every fallible function returns an [`EcgsslStatus`]; on failure a
//!   message is available from [`ecgssl_last_error`] on the same thread.
//! - Variable-length outputs use a two-call protocol: pass a null `out` to
//!   receive the required length in `*out_len`, then call again with a buffer
//!   of at least that many elements.
//! - Models are opaque handles released with [`ecgssl_model_free`].
//! - Panics never cross the boundary; they surface as `ECGSSL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ecgssl::models::{load_model, save_model, Mode, ModelFile};
use ecgssl::nn::Tensor;
use ecgssl::signal::{self, EcgSegment, SegmentSource};
use ecgssl::transforms::{self, TransformId, TransformParams};
use ecgssl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcgsslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Unsupported = 4,
    Shape = 5,
    Format = 6,
    Io = 7,
    Transfer = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcgsslModelKind {
    Pretext = 0,
    Emotion = 1,
}

/// Transformation parameters; see `ecgssl_transform_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EcgsslTransformParams {
    pub noise_sigma_rel: f64,
    pub scale_factor: f64,
    pub permute_pieces: usize,
    pub warp_pieces: usize,
    pub warp_stretch: f64,
}

/// Opaque model handle.
pub struct EcgsslModel {
    inner: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EcgsslStatus {
    match e {
        Error::Validation(_) | Error::Data(_) => EcgsslStatus::Validation,
        Error::Parameter(_) | Error::Config(_) => EcgsslStatus::InvalidArgument,
        Error::Unsupported(_) => EcgsslStatus::Unsupported,
        Error::Shape { .. } => EcgsslStatus::Shape,
        Error::Transfer(_) => EcgsslStatus::Transfer,
        Error::Format { .. } => EcgsslStatus::Format,
        Error::Io { .. } => EcgsslStatus::Io,
    }
}

struct Fail(EcgsslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EcgsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EcgsslStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            EcgsslStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(EcgsslStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable elements.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copy `v` into `out` (capacity `cap`) and store its length, or only the
/// length when `out` is null.
///
/// # Safety
/// `out` must be null or writable for `cap` elements; `out_len` must be valid.
unsafe fn emit<T: Copy>(v: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = v.len();
    if out.is_null() {
        return Ok(());
    }
    if cap < v.len() {
        return Err(Fail(
            EcgsslStatus::BufferTooSmall,
            format!("buffer holds {cap} elements, {} needed", v.len()),
        ));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    Ok(())
}

/// # Safety
/// `p` must be a valid nul-terminated string.
unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(EcgsslStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Message of the last failed call on this thread (empty after success).
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ecgssl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ecgssl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples per analysis window (10 s at 256 Hz).
#[no_mangle]
pub extern "C" fn ecgssl_window_len() -> usize {
    signal::WINDOW_LEN
}

/// Synthetic ECG of `duration_s` seconds at `fs` Hz.
///
/// # Safety
/// See the crate-level buffer conventions.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_synth_ecg(
    heart_rate_bpm: f64,
    fs: f64,
    duration_s: f64,
    seed: u64,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> EcgsslStatus {
    guard(|| {
        let x = signal::synth_ecg(heart_rate_bpm, fs, duration_s, seed)?;
        emit(&x, out, cap, out_len)
    })
}

/// Zero-phase baseline-wander high-pass filter. `out` receives `n` samples.
///
/// # Safety
/// `signal` must hold `n` readable values and `out` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_highpass(signal: *const f64, n: usize, fs: f64, out: *mut f64) -> EcgsslStatus {
    guard(|| {
        let x = slice(signal, n, "signal")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let y = signal::highpass_baseline_filter(x, fs)?;
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// Integer-ratio decimation from `fs_in` to `fs_out`.
///
/// # Safety
/// See the crate-level buffer conventions.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_resample(
    signal: *const f64,
    n: usize,
    fs_in: f64,
    fs_out: f64,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> EcgsslStatus {
    guard(|| {
        let y = signal::resample(slice(signal, n, "signal")?, fs_in, fs_out)?;
        emit(&y, out, cap, out_len)
    })
}

#[no_mangle]
pub extern "C" fn ecgssl_transform_params_default() -> EcgsslTransformParams {
    let p = TransformParams::default();
    EcgsslTransformParams {
        noise_sigma_rel: p.noise_sigma_rel,
        scale_factor: p.scale_factor,
        permute_pieces: p.permute_pieces,
        warp_pieces: p.warp_pieces,
        warp_stretch: p.warp_stretch,
    }
}

/// Apply transformation `task_id` (0 = original, 1 = noise, 2 = scale,
/// 3 = negate, 4 = horizontal flip, 5 = permute, 6 = time warp) to `n`
/// samples. `params` may be null for defaults. `out` receives `n` samples.
///
/// # Safety
/// `samples` must hold `n` readable values and `out` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_transform(
    task_id: u8,
    samples: *const f32,
    n: usize,
    params: *const EcgsslTransformParams,
    seed: u64,
    out: *mut f32,
) -> EcgsslStatus {
    guard(|| {
        let id = TransformId::from_code(task_id)
            .ok_or_else(|| Fail(EcgsslStatus::InvalidArgument, format!("unknown transformation id {task_id}")))?;
        let x = slice(samples, n, "samples")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = if params.is_null() { ecgssl_transform_params_default() } else { *params };
        let p = TransformParams {
            noise_sigma_rel: c.noise_sigma_rel,
            scale_factor: c.scale_factor,
            permute_pieces: c.permute_pieces,
            warp_pieces: c.warp_pieces,
            warp_stretch: c.warp_stretch,
            rng_seed: seed,
        };
        p.validate()?;
        let seg = EcgSegment::new(x.to_vec(), SegmentSource::default())?;
        let y = transforms::apply(id, &seg, &p, seed)?;
        ptr::copy_nonoverlapping(y.samples.as_ptr(), out, n);
        Ok(())
    })
}

/// Load a model file. On success `*out` owns a handle.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_load(path: *const c_char, out: *mut *mut EcgsslModel) -> EcgsslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let inner = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EcgsslModel { inner }));
        Ok(())
    })
}

/// Write a model to `path`.
///
/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_save(model: *const EcgsslModel, path: *const c_char) -> EcgsslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        save_model(&m.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_free(model: *mut EcgsslModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_kind(model: *const EcgsslModel, out: *mut EcgsslModelKind) -> EcgsslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = match m.inner {
            ModelFile::Pretext(_) => EcgsslModelKind::Pretext,
            ModelFile::Emotion(_) => EcgsslModelKind::Emotion,
        };
        Ok(())
    })
}

fn width_of(m: &ModelFile) -> usize {
    match m {
        ModelFile::Pretext(n) => n.heads.len(),
        ModelFile::Emotion(n) => n.head.output_dim(),
    }
}

/// Input window length and output width of a model.
///
/// # Safety
/// `model` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_dims(
    model: *const EcgsslModel,
    input_len: *mut usize,
    output_dim: *mut usize,
) -> EcgsslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *input_len.as_mut().ok_or_else(|| null("input_len"))? = m.inner.trunk().spec.input_len;
        *output_dim.as_mut().ok_or_else(|| null("output_dim"))? = width_of(&m.inner);
        Ok(())
    })
}

/// Inference on `batch` windows of `input_len` samples each (row-major).
/// Pretext models write `batch × 7` task probabilities; emotion models write
/// `batch × classes` class scores.
///
/// # Safety
/// `x` must hold `batch × input_len` values; see the buffer conventions for
/// `out`.
#[no_mangle]
pub unsafe extern "C" fn ecgssl_model_forward(
    model: *const EcgsslModel,
    x: *const f32,
    batch: usize,
    out: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> EcgsslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let l = m.inner.trunk().spec.input_len;
        if batch == 0 {
            return Err(Fail(EcgsslStatus::InvalidArgument, "batch must be > 0".into()));
        }
        if out.is_null() {
            return emit::<f32>(&vec![0.0; batch * width_of(&m.inner)], ptr::null_mut(), 0, out_len);
        }
        let xs = slice(x, batch * l, "x")?;
        let t = Tensor::from_vec(&[batch, l, 1], xs.to_vec())?;
        let y = match &m.inner {
            ModelFile::Pretext(n) => n.forward(&t, 0.0, Mode::Inference)?,
            ModelFile::Emotion(n) => n.forward(&t, 0.0, Mode::Inference)?,
        };
        emit(y.data(), out, cap, out_len)
    })
}
