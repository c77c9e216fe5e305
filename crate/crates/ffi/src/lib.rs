//! C ABI over the `mmface` core.
//!
//! Every function returns an [`MmfStatus`]. On failure a message is kept
//! per thread and can be read with [`mmf_last_error`]. Models are opaque
//! handles created by [`mmf_model_load`] or [`mmf_model_init`] and released
//! with [`mmf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use mmface::denoiser::{eam_combine, Denoiser, DenoiserConfig};
use mmface::diffusion::{sample, GuidanceSpec, Models, NoiseSchedule};
use mmface::evalkit;
use mmface::facegen::{derive_conditions, render, sample_params, ConditionSet, Image, ATTR_BITS};
use mmface::trainer::load_model;
use mmface::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Numeric = 5,
    Config = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmfGuidance {
    None = 0,
    Scalar = 1,
    PerModality = 2,
}

/// Condition payloads. A null pointer leaves that modality inactive.
/// `mask` and `sketch` hold side² bytes, `attr` six bytes and `lowres`
/// (side/4)² doubles.
#[repr(C)]
pub struct MmfConditions {
    pub mask: *const u8,
    pub attr: *const u8,
    pub sketch: *const u8,
    pub lowres: *const f64,
}

/// Opaque model handle.
pub struct MmfModel {
    model: Denoiser,
    schedule: NoiseSchedule,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MmfStatus {
    match e {
        Error::Io { .. } => MmfStatus::Io,
        Error::Checkpoint(_) | Error::TensorFormat(_) | Error::UnknownParam(_) => MmfStatus::Checkpoint,
        Error::Config(_) => MmfStatus::Config,
        e if e.is_numeric() => MmfStatus::Numeric,
        _ => MmfStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MmfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            MmfStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            MmfStatus::Internal
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

fn invalid(msg: String) -> Fail {
    Fail::Core(Error::InvalidArgument(msg))
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mmf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the checkpoint directory `path` into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_load(path: *const c_char, out: *mut *mut MmfModel) -> MmfStatus {
    guard(|| {
        nonnull(path, "path")?;
        nonnull(out as *const _, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let (model, manifest) = load_model(Path::new(path))?;
        let schedule = manifest.schedule.build()?;
        *out = Box::into_raw(Box::new(MmfModel { model, schedule }));
        Ok(())
    })
}

/// Creates an untrained desk-sized model (`micro` nonzero selects the
/// small test configuration) with the default schedule.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_init(micro: i32, seed: u64, out: *mut *mut MmfModel) -> MmfStatus {
    guard(|| {
        nonnull(out as *const _, "out")?;
        let config = if micro != 0 {
            DenoiserConfig::micro()
        } else {
            DenoiserConfig::desk()
        };
        let model = Denoiser::init(config, seed)?;
        *out = Box::into_raw(Box::new(MmfModel {
            model,
            schedule: NoiseSchedule::desk(),
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_free(model: *mut MmfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image side of the model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_side(model: *const MmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().side)
}

/// Number of scalar parameters, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_param_count(model: *const MmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.params().scalar_count())
}

unsafe fn conditions(c: *const MmfConditions, side: usize) -> Result<ConditionSet, Fail> {
    let mut cs = ConditionSet::empty(side);
    let Some(c) = c.as_ref() else {
        return Ok(cs);
    };
    let n = side * side;
    if !c.mask.is_null() {
        cs.mask = Some(slice::from_raw_parts(c.mask, n).to_vec());
    }
    if !c.attr.is_null() {
        let mut a = [0u8; ATTR_BITS];
        a.copy_from_slice(slice::from_raw_parts(c.attr, ATTR_BITS));
        cs.attr = Some(a);
    }
    if !c.sketch.is_null() {
        cs.sketch = Some(slice::from_raw_parts(c.sketch, n).to_vec());
    }
    if !c.lowres.is_null() {
        cs.lowres = Some(slice::from_raw_parts(c.lowres, n / 16).to_vec());
    }
    cs.validate()?;
    Ok(cs)
}

/// Draws `count` images into `out` (`count · side²` doubles, row-major).
/// Image `i` depends only on `seed` and `i`. `w` holds `n_w` weights; it is
/// ignored for [`MmfGuidance::None`]. `cond` may be null for unconditional
/// sampling.
///
/// # Safety
/// Pointers must be valid for the lengths described above.
#[no_mangle]
pub unsafe extern "C" fn mmf_sample(
    model: *const MmfModel,
    cond: *const MmfConditions,
    guidance: MmfGuidance,
    w: *const f64,
    n_w: usize,
    seed: u64,
    count: usize,
    out: *mut f64,
    out_len: usize,
) -> MmfStatus {
    guard(|| {
        let m = nonnull(model, "model")?.as_ref().expect("checked");
        nonnull(out as *const f64, "out")?;
        let side = m.model.config().side;
        if out_len != count * side * side {
            return Err(invalid(format!("out_len {out_len} != count · side² = {}", count * side * side)));
        }
        let cs = conditions(cond, side)?;
        let weights = if n_w == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(nonnull(w, "w")?, n_w).to_vec()
        };
        let spec = match guidance {
            MmfGuidance::None => GuidanceSpec::none(),
            MmfGuidance::Scalar => {
                let [w] = weights.as_slice() else {
                    return Err(invalid("scalar guidance takes one weight".into()));
                };
                GuidanceSpec::scalar(*w)
            }
            MmfGuidance::PerModality => GuidanceSpec::per_modality(weights),
        };
        let images = sample(&Models::Unified(&m.model), &cs, &spec, &m.schedule, seed, count)?;
        let out = slice::from_raw_parts_mut(out, out_len);
        for (chunk, img) in out.chunks_mut(side * side).zip(images) {
            chunk.copy_from_slice(&img.pixels);
        }
        Ok(())
    })
}

/// Renders the face of `seed` into `out` (`side²` doubles).
///
/// # Safety
/// `out` must be valid for `side²` doubles.
#[no_mangle]
pub unsafe extern "C" fn mmf_render_face(seed: u64, side: usize, out: *mut f64) -> MmfStatus {
    guard(|| {
        nonnull(out as *const f64, "out")?;
        let p = sample_params(seed)?;
        let cs = ConditionSet::empty(side);
        cs.validate()?;
        let img = render(&p, side);
        slice::from_raw_parts_mut(out, side * side).copy_from_slice(&img.pixels);
        Ok(())
    })
}

/// Writes every condition of the face of `seed`. Null outputs are skipped.
///
/// # Safety
/// Non-null outputs must be valid for the lengths of [`MmfConditions`].
#[no_mangle]
pub unsafe extern "C" fn mmf_derive_conditions(
    seed: u64,
    side: usize,
    mask: *mut u8,
    attr: *mut u8,
    sketch: *mut u8,
    lowres: *mut f64,
) -> MmfStatus {
    guard(|| {
        ConditionSet::empty(side).validate()?;
        let cs = derive_conditions(&sample_params(seed)?, side);
        let n = side * side;
        if !mask.is_null() {
            slice::from_raw_parts_mut(mask, n).copy_from_slice(cs.mask.as_deref().expect("derived"));
        }
        if !attr.is_null() {
            slice::from_raw_parts_mut(attr, ATTR_BITS).copy_from_slice(&cs.attr.expect("derived"));
        }
        if !sketch.is_null() {
            slice::from_raw_parts_mut(sketch, n).copy_from_slice(cs.sketch.as_deref().expect("derived"));
        }
        if !lowres.is_null() {
            slice::from_raw_parts_mut(lowres, n / 16).copy_from_slice(cs.lowres.as_deref().expect("derived"));
        }
        Ok(())
    })
}

unsafe fn image(pixels: *const f64, side: usize) -> Result<Image, Fail> {
    let p = nonnull(pixels, "image")?;
    Ok(Image::new(side, slice::from_raw_parts(p, side * side).to_vec())?)
}

/// Mask agreement of an image with `mask` (`side²` class bytes).
///
/// # Safety
/// `pixels` and `mask` must be valid for `side²` elements, `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn mmf_mask_accuracy(
    pixels: *const f64,
    side: usize,
    mask: *const u8,
    out: *mut f64,
) -> MmfStatus {
    guard(|| {
        let img = image(pixels, side)?;
        let mask = slice::from_raw_parts(nonnull(mask, "mask")?, side * side);
        nonnull(out as *const f64, "out")?;
        *out = evalkit::mask_accuracy(&img, mask);
        Ok(())
    })
}

/// Attribute agreement of an image with six attribute bits.
///
/// # Safety
/// `pixels` must be valid for `side²` doubles, `attr` for six bytes, `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn mmf_attr_accuracy(
    pixels: *const f64,
    side: usize,
    attr: *const u8,
    out: *mut f64,
) -> MmfStatus {
    guard(|| {
        let img = image(pixels, side)?;
        let mut a = [0u8; ATTR_BITS];
        a.copy_from_slice(slice::from_raw_parts(nonnull(attr, "attr")?, ATTR_BITS));
        nonnull(out as *const f64, "out")?;
        *out = evalkit::attr_accuracy(&img, &a);
        Ok(())
    })
}

/// `n_b + (1/K) Σ_k w_k (n_k − n_b)` over maps of `len` values. `n_k` holds
/// the K maps back to back.
///
/// # Safety
/// `n_b` and `out` must be valid for `len` doubles, `n_k` for `k · len`, `w` for `k`.
#[no_mangle]
pub unsafe extern "C" fn mmf_eam_combine(
    n_b: *const f64,
    n_k: *const f64,
    w: *const f64,
    k: usize,
    len: usize,
    out: *mut f64,
) -> MmfStatus {
    guard(|| {
        let n_b = slice::from_raw_parts(nonnull(n_b, "n_b")?, len);
        let n_k = slice::from_raw_parts(nonnull(n_k, "n_k")?, k * len);
        let w = slice::from_raw_parts(nonnull(w, "w")?, k);
        nonnull(out as *const f64, "out")?;
        let maps: Vec<Vec<f64>> = n_k.chunks(len.max(1)).map(<[f64]>::to_vec).collect();
        let eps = eam_combine(n_b, &maps, w)?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(&eps);
        Ok(())
    })
}
