//! C ABI over the `uwseg` crate.
//!
//! Every fallible function returns a [`UwsegStatus`]; on failure the message
//! is available from [`uwseg_last_error`] on the same thread until the next
//! failing call. Output pointers are written only on success. Models are
//! opaque handles released with [`uwseg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uwseg::data::{generate_dataset, GenerateConfig};
use uwseg::losses::signed_distance_map;
use uwseg::metrics::{dsc, nsd, BinaryMask, NsdConfig};
use uwseg::model::{BoxPrompt, SegModel};
use uwseg::uncertainty::{combine, stationary_sigma2, UncertaintyState};
use uwseg::{Error, Grid};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonBinary = 4,
    Io = 5,
    Checkpoint = 6,
    Dataset = 7,
    Config = 8,
    Format = 9,
    NonFinite = 10,
    Panic = 11,
}

impl From<&Error> for UwsegStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::NodeShape { .. } | Error::Shape(_) | Error::BoxOutOfBounds(..) => UwsegStatus::ShapeMismatch,
            Error::NonBinary { .. } => UwsegStatus::NonBinary,
            Error::Io { .. } => UwsegStatus::Io,
            Error::Checkpoint(_) => UwsegStatus::Checkpoint,
            Error::Dataset(_) => UwsegStatus::Dataset,
            Error::Config(_) => UwsegStatus::Config,
            Error::PgmMagic(_)
            | Error::PgmVariant(_)
            | Error::PgmHeader(_)
            | Error::PgmTruncated { .. }
            | Error::Json(_) => UwsegStatus::Format,
            Error::NonFinite { .. } | Error::Divergence { .. } => UwsegStatus::NonFinite,
            _ => UwsegStatus::InvalidArgument,
        }
    }
}

/// Opaque trained model.
pub struct UwsegModel {
    inner: SegModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(UwsegStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(UwsegStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(UwsegStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(UwsegStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UwsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UwsegStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            UwsegStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn dims_arg(dims: *const usize, rank: usize) -> Result<Vec<usize>, Failure> {
    if dims.is_null() {
        return Err(null("dims"));
    }
    if !(rank == 2 || rank == 3) {
        return Err(invalid(format!("rank must be 2 or 3, got {rank}")));
    }
    let dims = std::slice::from_raw_parts(dims, rank).to_vec();
    if dims.contains(&0) {
        return Err(invalid("zero-length dimension"));
    }
    Ok(dims)
}

unsafe fn mask_arg(data: *const u8, shape: &[usize], what: &str) -> Result<BinaryMask, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let n: usize = shape.iter().product();
    let raw = std::slice::from_raw_parts(data, n);
    if let Some(i) = raw.iter().position(|&v| v > 1) {
        return Err(Failure(
            UwsegStatus::NonBinary,
            format!("{what}[{i}] = {} is not 0 or 1", raw[i]),
        ));
    }
    Ok(BinaryMask::from_bits(shape, raw.iter().map(|&v| v == 1).collect())?)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null if none. Owned by
/// the library and valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn uwseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uwseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `uwseg train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwseg_model_load(path: *const c_char, out: *mut *mut UwsegModel) -> UwsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = SegModel::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(UwsegModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`uwseg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uwseg_model_free(model: *mut UwsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hidden channel count of the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwseg_model_width(model: *const UwsegModel, out: *mut usize) -> UwsegStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.inner.width;
        Ok(())
    })
}

/// Foreground probabilities for a row-major `height`×`width` image in
/// `[0, 1]` and a box `{r0, c0, r1, c1}` covering rows `r0..r1` and
/// columns `c0..c1` (end exclusive).
///
/// # Safety
/// `image` and `out_prob` must hold `height * width` values; `box_rc` must
/// hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn uwseg_model_predict(
    model: *const UwsegModel,
    image: *const f64,
    height: usize,
    width: usize,
    box_rc: *const usize,
    out_prob: *mut f64,
) -> UwsegStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if image.is_null() || box_rc.is_null() || out_prob.is_null() {
            return Err(null("image, box_rc or out_prob"));
        }
        if height == 0 || width == 0 {
            return Err(invalid("empty image"));
        }
        let n = height * width;
        let img = Grid::new(vec![height, width], std::slice::from_raw_parts(image, n).to_vec())?;
        let b = std::slice::from_raw_parts(box_rc, 4);
        let prompt = BoxPrompt::new(b[0], b[1], b[2], b[3])?;
        let prob = model.inner.predict(&img, &prompt)?;
        std::slice::from_raw_parts_mut(out_prob, n).copy_from_slice(prob.data());
        Ok(())
    })
}

/// Dice similarity of two 0/1 masks of shape `dims[0..rank]`, rank 2 or 3.
///
/// # Safety
/// `y` and `y_hat` must hold `product(dims)` bytes; `dims` must hold `rank`
/// values.
#[no_mangle]
pub unsafe extern "C" fn uwseg_dsc(
    y: *const u8,
    y_hat: *const u8,
    dims: *const usize,
    rank: usize,
    out: *mut f64,
) -> UwsegStatus {
    guard(|| {
        let shape = dims_arg(dims, rank)?;
        let a = mask_arg(y, &shape, "y")?;
        let b = mask_arg(y_hat, &shape, "y_hat")?;
        *out_arg(out, "out")? = dsc(&a, &b)?;
        Ok(())
    })
}

/// Normalized surface dice at `tolerance` voxels.
///
/// # Safety
/// As for [`uwseg_dsc`].
#[no_mangle]
pub unsafe extern "C" fn uwseg_nsd(
    y: *const u8,
    y_hat: *const u8,
    dims: *const usize,
    rank: usize,
    tolerance: f64,
    out: *mut f64,
) -> UwsegStatus {
    guard(|| {
        let shape = dims_arg(dims, rank)?;
        let a = mask_arg(y, &shape, "y")?;
        let b = mask_arg(y_hat, &shape, "y_hat")?;
        *out_arg(out, "out")? = nsd(&a, &b, NsdConfig::new(tolerance)?)?;
        Ok(())
    })
}

/// Signed distance to the mask boundary, negative inside. Writes all zeros
/// for an empty or full mask.
///
/// # Safety
/// `mask` and `out` must hold `product(dims)` elements.
#[no_mangle]
pub unsafe extern "C" fn uwseg_signed_distance_map(
    mask: *const u8,
    dims: *const usize,
    rank: usize,
    out: *mut f64,
) -> UwsegStatus {
    guard(|| {
        let shape = dims_arg(dims, rank)?;
        let m = mask_arg(mask, &shape, "mask")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sdm = signed_distance_map(&m);
        std::slice::from_raw_parts_mut(out, sdm.grid.len()).copy_from_slice(sdm.grid.data());
        Ok(())
    })
}

/// Sum over components of `0.5 * L * exp(-s) + ln(1 + exp(s))`, where
/// `s = ln(sigma^2)`.
///
/// # Safety
/// `losses` and `log_vars` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn uwseg_combine(
    losses: *const f64,
    log_vars: *const f64,
    m: usize,
    out: *mut f64,
) -> UwsegStatus {
    guard(|| {
        if losses.is_null() || log_vars.is_null() {
            return Err(null("losses or log_vars"));
        }
        let state = UncertaintyState::from_log_vars(std::slice::from_raw_parts(log_vars, m).to_vec())?;
        *out_arg(out, "out")? = combine(std::slice::from_raw_parts(losses, m), &state)?;
        Ok(())
    })
}

/// The sigma^2 minimizing one combined component for a fixed loss `l >= 0`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwseg_stationary_sigma2(l: f64, out: *mut f64) -> UwsegStatus {
    guard(|| {
        *out_arg(out, "out")? = stationary_sigma2(l)?;
        Ok(())
    })
}

/// Writes a synthetic dataset to `out_dir`. `config_json` may be null for
/// the defaults.
///
/// # Safety
/// `out_dir` and, when non-null, `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn uwseg_generate_dataset(
    out_dir: *const c_char,
    seed: u64,
    config_json: *const c_char,
) -> UwsegStatus {
    guard(|| {
        let root = path_arg(out_dir, "out_dir")?;
        let cfg: GenerateConfig = if config_json.is_null() {
            GenerateConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| invalid("config_json is not UTF-8"))?;
            serde_json::from_str(text).map_err(Error::from)?
        };
        generate_dataset(&cfg, seed, &root)?;
        Ok(())
    })
}
