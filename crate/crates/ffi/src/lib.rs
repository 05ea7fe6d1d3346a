//! C ABI over `samp-core`.
//!
//! Every fallible function returns a [`SampStatus`]. On failure the message is
//! available from [`samp_last_error`] on the same thread until the next call.
//! Models are opaque handles released with [`samp_model_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use samp_core::bias::{alpha_weights, NUM_BINS};
use samp_core::data::{
    image_input, read_checkpoint, FeatureMap, ModelInput, SaliencyGrid, ScoreDistribution,
};
use samp_core::losses::emd_loss;
use samp_core::model::{FeatureSource, Model, ModelConfig, ModelParams, Prediction};
use samp_core::patterns::pattern_mask;
use samp_core::raster::Raster;
use samp_core::saliency::{downsample_max, spectral_residual};
use samp_core::stats::{kendalls_w, RatingTable};
use samp_core::{Error, NUM_ATTRIBUTES, NUM_PATTERNS, NUM_SCORES};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Undefined = 4,
    Numeric = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

/// Opaque trained model.
pub struct SampModel {
    model: Model,
    params: ModelParams,
}

/// Shape information for a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SampModelInfo {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub saliency_height: usize,
    pub saliency_width: usize,
    /// 1 when the model has its own convolutional stem and reads images.
    pub uses_stem: u8,
    /// 1 when predictions include attributes.
    pub has_attributes: u8,
}

/// One forward pass.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SampPrediction {
    pub distribution: [f64; 5],
    pub expected_score: f64,
    pub pattern_weights: [f64; 8],
    /// 1-based.
    pub dominant_pattern: u32,
    pub attention: [f64; 2],
    /// Zeros when `has_attributes` is 0.
    pub attributes: [f64; 5],
    pub has_attributes: u8,
}

// The C struct spells its array lengths out.
const _: () = assert!(NUM_SCORES == 5 && NUM_PATTERNS == 8 && NUM_ATTRIBUTES == 5);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SampStatus {
    match e {
        Error::Invalid(_) | Error::Record { .. } => SampStatus::InvalidArgument,
        Error::Shape(_) => SampStatus::ShapeMismatch,
        Error::Undefined(_) => SampStatus::Undefined,
        Error::Numeric(_) => SampStatus::Numeric,
        Error::Io { .. } => SampStatus::Io,
        Error::Format { .. } | Error::Image { .. } => SampStatus::Format,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SampStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SampStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            SampStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SampStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn distribution(p: &[f64]) -> Result<ScoreDistribution, Error> {
    let mut a = [0.0; NUM_SCORES];
    a.copy_from_slice(p);
    ScoreDistribution::new(a)
}

fn fill_prediction(pred: &Prediction, out: &mut SampPrediction) {
    *out = SampPrediction::default();
    out.distribution = *pred.distribution.probs();
    out.expected_score = pred.expected_score();
    for (o, w) in out.pattern_weights.iter_mut().zip(&pred.pattern_weights) {
        *o = *w;
    }
    out.dominant_pattern = pred.dominant_pattern() as u32;
    out.attention = pred.attention;
    if let Some(a) = pred.attributes {
        out.attributes = a;
        out.has_attributes = 1;
    }
}

/// Message of the last failure on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn samp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn samp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `samp train`.
#[no_mangle]
pub unsafe extern "C" fn samp_model_load(path: *const c_char, out: *mut *mut SampModel) -> SampStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Invalid("path is not UTF-8".into()))?;
        let ckpt = read_checkpoint(path)?;
        let (config, params) = ModelParams::from_checkpoint(&ckpt)?;
        let model = Model::new(config)?;
        model.check_params(&params)?;
        *out = Box::into_raw(Box::new(SampModel { model, params }));
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn samp_model_free(model: *mut SampModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn samp_model_info(model: *const SampModel, out: *mut SampModelInfo) -> SampStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let out = out_ref(out, "out")?;
        let c: &ModelConfig = m.model.config();
        *out = SampModelInfo {
            channels: c.channels,
            height: c.height,
            width: c.width,
            saliency_height: c.saliency_height(),
            saliency_width: c.saliency_width(),
            uses_stem: u8::from(c.feature_source == FeatureSource::ToyStem),
            has_attributes: u8::from(c.use_attribute_branch),
        };
        Ok(())
    })
}

/// Predicts from a channel-major C×H×W feature map and a row-major saliency grid
/// of `saliency_height × saliency_width` values.
#[no_mangle]
pub unsafe extern "C" fn samp_model_predict_features(
    model: *const SampModel,
    features: *const f64,
    features_len: usize,
    saliency: *const f64,
    saliency_len: usize,
    out: *mut SampPrediction,
) -> SampStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let out = out_ref(out, "out")?;
        let c = m.model.config();
        let f = slice(features, features_len, "features")?;
        let s = slice(saliency, saliency_len, "saliency")?;
        let fm = FeatureMap::new(c.channels, c.height, c.width, f.to_vec())?;
        let grid = SaliencyGrid::new(c.saliency_height(), c.saliency_width(), s.to_vec())?;
        let pred = m.model.predict(&m.params, &ModelInput::Features(fm), &grid)?;
        fill_prediction(&pred, out);
        Ok(())
    })
}

/// Predicts from an interleaved H×W×channels image with values in [0, 1]
/// (1 or 3 channels). Saliency and features are computed internally.
#[no_mangle]
pub unsafe extern "C" fn samp_model_predict_image(
    model: *const SampModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut SampPrediction,
) -> SampStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let out = out_ref(out, "out")?;
        let len = height.checked_mul(width).and_then(|n| n.checked_mul(channels));
        let len = len.ok_or_else(|| Error::Invalid("image dimensions overflow".into()))?;
        let image = Raster::new(height, width, channels, slice(pixels, len, "pixels")?.to_vec())?;
        let c = m.model.config();
        let input = image_input(&image, c)?;
        let grid = downsample_max(&spectral_residual(&image)?, c.saliency_height(), c.saliency_width())?;
        let pred = m.model.predict(&m.params, &input, &grid)?;
        fill_prediction(&pred, out);
        Ok(())
    })
}

/// Normalised EMD between two five-bin distributions.
#[no_mangle]
pub unsafe extern "C" fn samp_emd_loss(y: *const f64, yhat: *const f64, r: f64, out: *mut f64) -> SampStatus {
    guard(|| {
        let y = distribution(slice(y, NUM_SCORES, "y")?)?;
        let yhat = distribution(slice(yhat, NUM_SCORES, "yhat")?)?;
        *out_ref(out, "out")? = emd_loss(&y, &yhat, r)?;
        Ok(())
    })
}

/// Tie-corrected Kendall's W for a row-major `raters × items` table of scores 1-5.
#[no_mangle]
pub unsafe extern "C" fn samp_kendalls_w(
    scores: *const u8,
    raters: usize,
    items: usize,
    out: *mut f64,
) -> SampStatus {
    guard(|| {
        let n = raters
            .checked_mul(items)
            .ok_or_else(|| Error::Invalid("table dimensions overflow".into()))?;
        let flat = slice(scores, n, "scores")?;
        let rows = if items == 0 {
            vec![Vec::new(); raters]
        } else {
            flat.chunks(items).map(<[u8]>::to_vec).collect()
        };
        *out_ref(out, "out")? = kendalls_w(&RatingTable::new(rows)?)?;
        Ok(())
    })
}

/// Spectral-residual saliency of an interleaved H×W×channels image; writes H·W values.
#[no_mangle]
pub unsafe extern "C" fn samp_spectral_residual(
    pixels: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> SampStatus {
    guard(|| {
        let len = height.checked_mul(width).and_then(|n| n.checked_mul(channels));
        let len = len.ok_or_else(|| Error::Invalid("image dimensions overflow".into()))?;
        let image = Raster::new(height, width, channels, slice(pixels, len, "pixels")?.to_vec())?;
        let map = spectral_residual(&image)?;
        slice_mut(out, height * width, "out")?.copy_from_slice(map.values());
        Ok(())
    })
}

/// Partition index of every cell of an H×W grid for pattern `p` (1-8), row-major.
#[no_mangle]
pub unsafe extern "C" fn samp_pattern_mask(
    p: u32,
    height: usize,
    width: usize,
    out: *mut u32,
    num_partitions: *mut u32,
) -> SampStatus {
    guard(|| {
        let map = pattern_mask(p as usize, height, width)?;
        let dst = slice_mut(out, height * width, "out")?;
        for (d, a) in dst.iter_mut().zip(map.assignment()) {
            *d = *a as u32;
        }
        if let Some(k) = num_partitions.as_mut() {
            *k = map.num_partitions() as u32;
        }
        Ok(())
    })
}

/// Per-bin loss weights for one category's four bin counts.
#[no_mangle]
pub unsafe extern "C" fn samp_alpha_weights(counts: *const u64, out: *mut f64) -> SampStatus {
    guard(|| {
        let mut col = [0u64; NUM_BINS];
        col.copy_from_slice(slice(counts, NUM_BINS, "counts")?);
        let a = alpha_weights(&col)?;
        slice_mut(out, NUM_BINS, "out")?.copy_from_slice(&a);
        Ok(())
    })
}
