//! C ABI over `dsal-core`.
//!
//! Models and CRF ensembles are opaque handles created by `*_new`/`*_load`
//! and released by `*_free`. Every fallible call returns a [`DsalStatus`];
//! on failure the message is available from [`dsal_last_error_message`] on
//! the same thread. Rasters are row-major `height * width` buffers owned by
//! the caller. Panics never cross the boundary; they surface as
//! `DSAL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dsal_core::crf::{self, CrfParams};
use dsal_core::raster::{dice, BinaryMask, ImageGrid, ProbMap};
use dsal_core::segmenter::{
    checkpoint, DeepSupervisedNet, MultiHeadPrediction, Segmenter, TrainConfig,
};
use dsal_core::selection::score_sample;
use dsal_core::weaklabeler::{build_ensemble, CrfEnsemble, PerturbSpec};
use dsal_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

/// Dense CRF hyperparameters; see `dsal_crf_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsalCrfParams {
    pub gaussian_sdims: f64,
    pub gaussian_compat: f64,
    pub bilateral_sdims: f64,
    pub bilateral_schan: f64,
    pub bilateral_compat: f64,
    pub steps: u32,
}

impl From<CrfParams> for DsalCrfParams {
    fn from(p: CrfParams) -> Self {
        Self {
            gaussian_sdims: p.gaussian_sdims,
            gaussian_compat: p.gaussian_compat,
            bilateral_sdims: p.bilateral_sdims,
            bilateral_schan: p.bilateral_schan,
            bilateral_compat: p.bilateral_compat,
            steps: p.steps as u32,
        }
    }
}

impl From<DsalCrfParams> for CrfParams {
    fn from(p: DsalCrfParams) -> Self {
        Self {
            gaussian_sdims: p.gaussian_sdims,
            gaussian_compat: p.gaussian_compat,
            bilateral_sdims: p.bilateral_sdims,
            bilateral_schan: p.bilateral_schan,
            bilateral_compat: p.bilateral_compat,
            steps: p.steps as usize,
        }
    }
}

/// Query scores of one prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsalScores {
    pub l_dsc: f64,
    pub m_dsc: f64,
    pub mean_dsc: f64,
    pub uncertainty: f64,
    pub confidence: f64,
}

/// Opaque deeply supervised segmenter.
pub struct DsalSegmenter {
    net: DeepSupervisedNet,
}

/// Opaque CRF ensemble.
pub struct DsalEnsemble {
    ensemble: CrfEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(DsalStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::NotDivisible { .. } => DsalStatus::DimensionMismatch,
            Error::Io { .. } => DsalStatus::Io,
            Error::Parse { .. } | Error::Decode { .. } | Error::Csv(_) => DsalStatus::Parse,
            _ => DsalStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DsalStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DsalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsalStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            DsalStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn area(height: usize, width: usize) -> Result<usize, Failure> {
    height.checked_mul(width).filter(|&n| n > 0).ok_or_else(|| {
        Failure(
            DsalStatus::InvalidArgument,
            format!("bad raster size {height}x{width}"),
        )
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(DsalStatus::InvalidArgument, "path is not UTF-8".to_string()))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dsal_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Center used for 32x32 inputs.
#[no_mangle]
pub extern "C" fn dsal_crf_params_default() -> DsalCrfParams {
    CrfParams::desk().into()
}

/// Tuned center for ISIC-sized dermoscopy images.
#[no_mangle]
pub extern "C" fn dsal_crf_params_isic() -> DsalCrfParams {
    CrfParams::isic().into()
}

/// Tuned center for RSNA-sized radiographs.
#[no_mangle]
pub extern "C" fn dsal_crf_params_rsna() -> DsalCrfParams {
    CrfParams::rsna().into()
}

/// Creates a segmenter with seeded initial weights.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_new(seed: u64, out: *mut *mut DsalSegmenter) -> DsalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(DsalSegmenter {
            net: DeepSupervisedNet::new(seed),
        }));
        Ok(())
    })
}

/// Loads a segmenter from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_load(
    path: *const c_char,
    out: *mut *mut DsalSegmenter,
) -> DsalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = checkpoint::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DsalSegmenter {
            net: DeepSupervisedNet { params },
        }));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_save(
    model: *const DsalSegmenter,
    path: *const c_char,
) -> DsalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        checkpoint::save(&model.net.params, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a segmenter. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_free(model: *mut DsalSegmenter) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts the three heads for one image with values in `[0, 1]`.
/// Any output pointer may be null to skip that head.
///
/// # Safety
/// Buffers must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_predict(
    model: *const DsalSegmenter,
    image: *const f64,
    height: usize,
    width: usize,
    lower: *mut f64,
    middle: *mut f64,
    final_: *mut f64,
) -> DsalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let n = area(height, width)?;
        let img = ImageGrid::new(height, width, slice(image, n, "image")?.to_vec())?;
        let pred = model.net.predict(&img)?;
        for (dst, head) in [
            (lower, &pred.lower),
            (middle, &pred.middle),
            (final_, &pred.final_),
        ] {
            if !dst.is_null() {
                slice_mut(dst, n, "head")?.copy_from_slice(head.values());
            }
        }
        Ok(())
    })
}

/// Warm-started training on `count` image/mask pairs stored back to back.
/// Masks hold 0 or 1. Uses the library defaults for everything but
/// `epochs`, `learning_rate` and `seed`.
///
/// # Safety
/// `images` and `masks` must hold `count * height * width` values.
#[no_mangle]
pub unsafe extern "C" fn dsal_segmenter_train(
    model: *mut DsalSegmenter,
    images: *const f64,
    masks: *const u8,
    count: usize,
    height: usize,
    width: usize,
    epochs: u32,
    learning_rate: f64,
    seed: u64,
) -> DsalStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let n = area(height, width)?;
        let total = n.checked_mul(count).ok_or_else(|| {
            Failure(
                DsalStatus::InvalidArgument,
                "buffer size overflows".to_string(),
            )
        })?;
        let images = slice(images, total, "images")?;
        let masks = slice(masks, total, "masks")?;
        let pairs = images
            .chunks_exact(n)
            .zip(masks.chunks_exact(n))
            .map(|(i, m)| {
                Ok((
                    ImageGrid::new(height, width, i.to_vec())?,
                    BinaryMask::new(height, width, m.to_vec())?,
                ))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let data: Vec<_> = pairs.iter().map(|(i, m)| (i, m)).collect();
        let cfg = TrainConfig {
            epochs: epochs as usize,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        model.net.fine_tune(&data, &cfg)?;
        Ok(())
    })
}

/// Scores a three-head prediction.
///
/// # Safety
/// Head buffers must hold `height * width` values; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dsal_score(
    lower: *const f64,
    middle: *const f64,
    final_: *const f64,
    height: usize,
    width: usize,
    out: *mut DsalScores,
) -> DsalStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = area(height, width)?;
        let head = |p: *const f64, what: &str| -> Result<ProbMap, Failure> {
            Ok(ProbMap::new(height, width, slice(p, n, what)?.to_vec())?)
        };
        let pred = MultiHeadPrediction::new(
            head(lower, "lower")?,
            head(middle, "middle")?,
            head(final_, "final")?,
        )?;
        let s = score_sample("", &pred)?;
        *out = DsalScores {
            l_dsc: s.l_dsc,
            m_dsc: s.m_dsc,
            mean_dsc: s.mean_dsc,
            uncertainty: s.uncertainty,
            confidence: s.confidence,
        };
        Ok(())
    })
}

/// Dice of two 0/1 masks of `len` pixels.
///
/// # Safety
/// Both buffers must hold `len` values; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn dsal_dice(
    a: *const u8,
    b: *const u8,
    len: usize,
    out: *mut f64,
) -> DsalStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        area(1, len)?;
        let a = BinaryMask::new(1, len, slice(a, len, "a")?.to_vec())?;
        let b = BinaryMask::new(1, len, slice(b, len, "b")?.to_vec())?;
        *out = dice(&a, &b)?;
        Ok(())
    })
}

/// Single-CRF labeling of a probability map.
///
/// # Safety
/// Buffers must hold `height * width` values; `params` valid for a read.
#[no_mangle]
pub unsafe extern "C" fn dsal_crf_infer(
    params: *const DsalCrfParams,
    image: *const f64,
    prob: *const f64,
    height: usize,
    width: usize,
    out_mask: *mut u8,
) -> DsalStatus {
    guard(|| {
        let params: CrfParams = (*params.as_ref().ok_or_else(|| null("params"))?).into();
        let n = area(height, width)?;
        let img = ImageGrid::new(height, width, slice(image, n, "image")?.to_vec())?;
        let p = ProbMap::new(height, width, slice(prob, n, "prob")?.to_vec())?;
        let mask = crf::infer(&img, &p, &params)?;
        slice_mut(out_mask, n, "out_mask")?.copy_from_slice(mask.values());
        Ok(())
    })
}

/// Builds an ensemble of `members` (odd) CRFs perturbed around `center` by
/// a normal draw with standard deviation `relative_sigma` times each value.
///
/// # Safety
/// `center` valid for a read; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsal_ensemble_new(
    center: *const DsalCrfParams,
    members: usize,
    relative_sigma: f64,
    seed: u64,
    out: *mut *mut DsalEnsemble,
) -> DsalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let center: CrfParams = (*center.as_ref().ok_or_else(|| null("center"))?).into();
        let spec = PerturbSpec {
            relative_sigma,
            ..PerturbSpec::default()
        };
        let ensemble = build_ensemble(center, members, spec, seed)?;
        *out = Box::into_raw(Box::new(DsalEnsemble { ensemble }));
        Ok(())
    })
}

/// Loads an ensemble from a snapshot file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsal_ensemble_load(
    path: *const c_char,
    out: *mut *mut DsalEnsemble,
) -> DsalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let ensemble = CrfEnsemble::from_snapshot(&text)?;
        *out = Box::into_raw(Box::new(DsalEnsemble { ensemble }));
        Ok(())
    })
}

/// Number of members.
///
/// # Safety
/// `ensemble` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dsal_ensemble_size(ensemble: *const DsalEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ensemble.len())
}

/// Majority-vote refinement of a probability map.
///
/// # Safety
/// Buffers must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn dsal_ensemble_refine(
    ensemble: *const DsalEnsemble,
    image: *const f64,
    prob: *const f64,
    height: usize,
    width: usize,
    out_mask: *mut u8,
) -> DsalStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        let n = area(height, width)?;
        let img = ImageGrid::new(height, width, slice(image, n, "image")?.to_vec())?;
        let p = ProbMap::new(height, width, slice(prob, n, "prob")?.to_vec())?;
        let mask = e.ensemble.refine(&img, &p)?;
        slice_mut(out_mask, n, "out_mask")?.copy_from_slice(mask.values());
        Ok(())
    })
}

/// Releases an ensemble. Null is ignored.
///
/// # Safety
/// `ensemble` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsal_ensemble_free(ensemble: *mut DsalEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}
