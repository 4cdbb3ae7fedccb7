//! C ABI over `cxr-core`.
//!
//! Every fallible function returns a [`CxrStatus`]; on failure a message is
//! available from [`cxr_last_error_message`] on the same thread. Networks
//! are opaque [`CxrNetwork`] handles released with [`cxr_network_free`].
//! Images are 8-bit gray, row-major, `width * height` bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cxr_core::checkpoint::{self, CheckpointError};
use cxr_core::image::GrayImage;
use cxr_core::metrics::{f1_score, roc_auc};
use cxr_core::model::{argmax_rows, Network};
use cxr_core::nn::Tensor;
use cxr_core::preproc;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CxrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadMagic = 4,
    CrcMismatch = 5,
    SpecMismatch = 6,
    ShapeMismatch = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// A trained network loaded from a checkpoint.
pub struct CxrNetwork {
    net: Network<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(CxrStatus, String);

type FfiResult = Result<(), Failure>;

fn fail(status: CxrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    fail(CxrStatus::InvalidArgument, e.to_string())
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::BadMagic => CxrStatus::BadMagic,
            CheckpointError::Crc => CxrStatus::CrcMismatch,
            CheckpointError::SpecMismatch(_) | CheckpointError::Model(_) => CxrStatus::SpecMismatch,
            CheckpointError::ShapeMismatch { .. } => CxrStatus::ShapeMismatch,
            CheckpointError::Io(_) => CxrStatus::Io,
        };
        fail(status, e.to_string())
    }
}

/// Runs `body`, records any failure and converts panics.
fn guard(body: impl FnOnce() -> FfiResult) -> CxrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CxrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CxrStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(CxrStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Borrows `len` elements; a null pointer is allowed only when `len` is 0.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cxr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_load(
    path: *const c_char,
    out: *mut *mut CxrNetwork,
) -> CxrStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(invalid)?;
        let net = checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(CxrNetwork { net }));
        Ok(())
    })
}

/// Releases a handle from [`cxr_network_load`]. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_free(net: *mut CxrNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_num_classes(
    net: *const CxrNetwork,
    out: *mut usize,
) -> CxrStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(out, "out")?;
        *out = (*net).net.num_classes();
        Ok(())
    })
}

/// Expected input height and width in pixels (one gray channel).
///
/// # Safety
/// `net` must be a live handle; `height` and `width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_input_size(
    net: *const CxrNetwork,
    height: *mut usize,
    width: *mut usize,
) -> CxrStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(height, "height")?;
        non_null(width, "width")?;
        let size = (*net).net.spec().input_size;
        *height = size.height;
        *width = size.width;
        Ok(())
    })
}

unsafe fn run_forward(
    net: *const CxrNetwork,
    pixels: *const f32,
    n: usize,
) -> Result<Tensor<f32>, Failure> {
    non_null(net, "net")?;
    let net: &Network<f32> = &(*net).net;
    if n == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let size = net.spec().input_size;
    let len = n * size.height * size.width;
    let data = slice(pixels, len, "pixels")?;
    let batch = Tensor::new(vec![n, 1, size.height, size.width], data.to_vec()).map_err(invalid)?;
    net.forward(&batch)
        .map_err(|e| fail(CxrStatus::ShapeMismatch, e.to_string()))
}

/// Class probabilities for `n` images of `height * width` floats in
/// `[0, 1]`, written row-major to `probs` (`probs_len >= n * classes`).
///
/// # Safety
/// `net` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_predict_proba(
    net: *const CxrNetwork,
    pixels: *const f32,
    n: usize,
    probs: *mut f32,
    probs_len: usize,
) -> CxrStatus {
    guard(|| {
        let p = run_forward(net, pixels, n)?;
        if probs_len < p.len() {
            return Err(invalid(format!(
                "probs buffer holds {probs_len}, need {}",
                p.len()
            )));
        }
        slice_mut(probs, p.len(), "probs")?.copy_from_slice(p.data());
        Ok(())
    })
}

/// Most probable class per image (ties go to the lowest index), written
/// to `classes[0..n]`.
///
/// # Safety
/// As [`cxr_network_predict_proba`]; `classes` holds `n` entries.
#[no_mangle]
pub unsafe extern "C" fn cxr_network_predict(
    net: *const CxrNetwork,
    pixels: *const f32,
    n: usize,
    classes: *mut usize,
) -> CxrStatus {
    guard(|| {
        let p = run_forward(net, pixels, n)?;
        slice_mut(classes, n, "classes")?.copy_from_slice(&argmax_rows(&p));
        Ok(())
    })
}

unsafe fn image_in(pixels: *const u8, width: usize, height: usize) -> Result<GrayImage, Failure> {
    let data = slice(pixels, width.saturating_mul(height), "pixels")?;
    GrayImage::new(width, height, data.to_vec()).map_err(invalid)
}

unsafe fn image_out(img: &GrayImage, out: *mut u8) -> FfiResult {
    slice_mut(out, img.data().len(), "out")?.copy_from_slice(img.data());
    Ok(())
}

/// `out = clamp(round(alpha * in + beta))`.
///
/// # Safety
/// `pixels` and `out` hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_adjust_brightness_contrast(
    pixels: *const u8,
    width: usize,
    height: usize,
    alpha: f64,
    beta: f64,
    out: *mut u8,
) -> CxrStatus {
    guard(|| {
        let img = image_in(pixels, width, height)?;
        image_out(
            &preproc::adjust_brightness_contrast(&img, alpha, beta).map_err(invalid)?,
            out,
        )
    })
}

/// # Safety
/// `pixels` and `out` hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_histogram_equalize(
    pixels: *const u8,
    width: usize,
    height: usize,
    out: *mut u8,
) -> CxrStatus {
    guard(|| {
        let img = image_in(pixels, width, height)?;
        image_out(&preproc::histogram_equalize(&img), out)
    })
}

/// Upper and lower ternary-pattern code maps for threshold `t`.
///
/// # Safety
/// `pixels`, `upper` and `lower` hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_local_ternary_pattern(
    pixels: *const u8,
    width: usize,
    height: usize,
    t: u8,
    upper: *mut u8,
    lower: *mut u8,
) -> CxrStatus {
    guard(|| {
        let img = image_in(pixels, width, height)?;
        let maps = preproc::local_ternary_pattern(&img, t).map_err(invalid)?;
        image_out(&maps.upper, upper)?;
        image_out(&maps.lower, lower)
    })
}

/// Binary output: 255 where the pixel exceeds its Gaussian-weighted
/// `block × block` neighbourhood mean minus `c`, else 0.
///
/// # Safety
/// `pixels` and `out` hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_adaptive_threshold(
    pixels: *const u8,
    width: usize,
    height: usize,
    block: usize,
    c: f64,
    out: *mut u8,
) -> CxrStatus {
    guard(|| {
        let img = image_in(pixels, width, height)?;
        image_out(
            &preproc::adaptive_threshold_gaussian(&img, block, c).map_err(invalid)?,
            out,
        )
    })
}

/// Histogram equalization followed by adaptive thresholding.
///
/// # Safety
/// `pixels` and `out` hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_hybrid_preprocess(
    pixels: *const u8,
    width: usize,
    height: usize,
    block: usize,
    c: f64,
    out: *mut u8,
) -> CxrStatus {
    guard(|| {
        let img = image_in(pixels, width, height)?;
        image_out(
            &preproc::hybrid_preprocess(&img, block, c).map_err(invalid)?,
            out,
        )
    })
}

/// Area under the ROC curve; `labels[i]` nonzero marks a positive.
///
/// # Safety
/// `scores` and `labels` hold `n` entries; `auc` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cxr_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    auc: *mut f64,
) -> CxrStatus {
    guard(|| {
        non_null(auc, "auc")?;
        let scores = slice(scores, n, "scores")?;
        let labels: Vec<bool> = slice(labels, n, "labels")?
            .iter()
            .map(|&l| l != 0)
            .collect();
        *auc = roc_auc(scores, &labels).map_err(invalid)?.auc;
        Ok(())
    })
}

/// Precision, recall and F1 from one-vs-rest counts. Values with a zero
/// denominator are written as NaN.
///
/// # Safety
/// The three output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cxr_precision_recall_f1(
    tp: u64,
    fp: u64,
    fn_: u64,
    precision: *mut f64,
    recall: *mut f64,
    f1: *mut f64,
) -> CxrStatus {
    guard(|| {
        non_null(precision, "precision")?;
        non_null(recall, "recall")?;
        non_null(f1, "f1")?;
        let ratio = |d: u64| {
            if d == 0 {
                f64::NAN
            } else {
                tp as f64 / d as f64
            }
        };
        let (p, r) = (ratio(tp + fp), ratio(tp + fn_));
        *precision = p;
        *recall = r;
        *f1 = if p.is_nan() || r.is_nan() {
            f64::NAN
        } else {
            f1_score(p, r).unwrap_or(f64::NAN)
        };
        Ok(())
    })
}
