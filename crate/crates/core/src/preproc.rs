//! Preprocessing operators for radiographs.
//!
//! Every operator is a pure function from a [`GrayImage`] to a new image of
//! the same dimensions. [`PreprocOp`] names an operator together with its
//! parameters so pipelines and configs can refer to it.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::image::GrayImage;

pub const DEFAULT_ALPHA: f64 = 1.2;
pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_BLOCK: usize = 11;
pub const DEFAULT_C: f64 = 2.0;

/// Names accepted by [`PreprocOp::parse`].
pub const OPERATOR_NAMES: [&str; 6] = [
    "identity",
    "augment",
    "histeq",
    "ltp",
    "threshold",
    "hybrid",
];

#[derive(Debug, Error, PartialEq)]
pub enum PreprocError {
    #[error("contrast factor must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("brightness offset must be finite, got {0}")]
    InvalidBeta(f64),
    #[error("threshold offset must be finite, got {0}")]
    InvalidOffset(f64),
    #[error("local ternary pattern needs at least a 3x3 image, got {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("threshold block size must be odd and at least 3, got {0}")]
    InvalidBlock(usize),
    #[error("unknown operator `{name}`; valid operators: {}", OPERATOR_NAMES.join(", "))]
    UnknownOperator { name: String },
    #[error("invalid parameters for `{name}`: {message}")]
    InvalidParams { name: String, message: String },
}

/// Linear intensity transform `clamp(round(alpha * v + beta), 0, 255)`.
pub fn adjust_brightness_contrast(
    img: &GrayImage,
    alpha: f64,
    beta: f64,
) -> Result<GrayImage, PreprocError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PreprocError::InvalidAlpha(alpha));
    }
    if !beta.is_finite() {
        return Err(PreprocError::InvalidBeta(beta));
    }
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = (alpha * v as f64 + beta).round().clamp(0.0, 255.0) as u8;
    }
    Ok(img.map_lut(&lut))
}

/// Global histogram equalization through the cumulative histogram.
///
/// Intensity `v` maps to `round((cdf(v) - cdf_min) / (N - cdf_min) * 255)`,
/// evaluated in exact integer arithmetic (ties round up). An image holding
/// a single intensity is returned unchanged.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let total = img.data().len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if cdf_min == total {
        return img.clone();
    }
    let denom = total - cdf_min;
    let mut lut = [0u8; 256];
    for (out, &c) in lut.iter_mut().zip(cdf.iter()) {
        let num = c.saturating_sub(cdf_min) * 255;
        *out = ((2 * num + denom) / (2 * denom)) as u8;
    }
    img.map_lut(&lut)
}

/// The two binary pattern maps of a local ternary pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LtpMaps {
    /// Bit `i` set when neighbor `i` lies above the band.
    pub upper: GrayImage,
    /// Bit `i` set when neighbor `i` lies below the band.
    pub lower: GrayImage,
}

/// Neighbor offsets in clockwise order starting top-left; neighbor `i`
/// is packed into bit `i`.
pub const LTP_NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Local ternary pattern with band half-width `t`.
///
/// A neighbor above `center + t` is labeled +1, below `center - t` is -1,
/// anything inside the band is 0. Border pixels see replicated edges.
pub fn local_ternary_pattern(img: &GrayImage, t: u8) -> Result<LtpMaps, PreprocError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(PreprocError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let t = t as i16;
    let mut upper = Vec::with_capacity(w * h);
    let mut lower = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x, y) as i16;
            let (mut up, mut lo) = (0u8, 0u8);
            for (bit, &(dx, dy)) in LTP_NEIGHBORS.iter().enumerate() {
                let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let n = img.get(nx, ny) as i16;
                if n > center + t {
                    up |= 1 << bit;
                } else if n < center - t {
                    lo |= 1 << bit;
                }
            }
            upper.push(up);
            lower.push(lo);
        }
    }
    Ok(LtpMaps {
        upper: GrayImage::new(w, h, upper).expect("dimensions preserved"),
        lower: GrayImage::new(w, h, lower).expect("dimensions preserved"),
    })
}

/// Standard deviation used for a Gaussian window of side `block`.
pub fn gaussian_sigma(block: usize) -> f64 {
    0.3 * ((block as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian weights of length `block`.
pub fn gaussian_kernel(block: usize) -> Vec<f64> {
    let sigma = gaussian_sigma(block);
    let r = (block / 2) as f64;
    let mut k: Vec<f64> = (0..block)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Binarizes against the Gaussian-weighted local mean minus `c`.
///
/// Output is 255 where `in(p) > G(p) - c`, 0 elsewhere. The window is
/// `block x block` with reflected borders.
pub fn adaptive_threshold_gaussian(
    img: &GrayImage,
    block: usize,
    c: f64,
) -> Result<GrayImage, PreprocError> {
    if block < 3 || block.is_multiple_of(2) {
        return Err(PreprocError::InvalidBlock(block));
    }
    if !c.is_finite() {
        return Err(PreprocError::InvalidOffset(c));
    }
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(block);
    let r = (block / 2) as isize;

    // Separable: horizontal pass into f64 rows, then vertical pass.
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + k as isize - r, w);
                acc += wt * img.get(sx, y) as f64;
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut mean = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + k as isize - r, h);
                mean += wt * horiz[sy * w + x];
            }
            out.push(if img.get(x, y) as f64 > mean - c {
                255
            } else {
                0
            });
        }
    }
    Ok(GrayImage::new(w, h, out).expect("dimensions preserved"))
}

/// Histogram equalization followed by adaptive Gaussian thresholding.
pub fn hybrid_preprocess(img: &GrayImage, block: usize, c: f64) -> Result<GrayImage, PreprocError> {
    adaptive_threshold_gaussian(&histogram_equalize(img), block, c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LtpMap {
    #[default]
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtpParams {
    #[serde(default)]
    pub t: u8,
    /// Which pattern map feeds single-channel consumers.
    #[serde(default)]
    pub map: LtpMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    #[serde(default = "default_block")]
    pub block: usize,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_block() -> usize {
    DEFAULT_BLOCK
}
fn default_c() -> f64 {
    DEFAULT_C
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            block: DEFAULT_BLOCK,
            c: DEFAULT_C,
        }
    }
}

/// A named operator with fully materialized parameters.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum PreprocOp {
    #[default]
    Identity,
    Augment(AugmentParams),
    HistEq,
    Ltp(LtpParams),
    Threshold(ThresholdParams),
    Hybrid(ThresholdParams),
}

impl PreprocOp {
    /// Builds an operator from its name and a JSON parameter object.
    /// Missing parameters take their defaults; unknown ones are rejected.
    pub fn parse(name: &str, params: &Value) -> Result<Self, PreprocError> {
        let params = if params.is_null() {
            Value::Object(Default::default())
        } else {
            params.clone()
        };
        let invalid = |e: serde_json::Error| PreprocError::InvalidParams {
            name: name.to_string(),
            message: e.to_string(),
        };
        let no_params = || -> Result<(), PreprocError> {
            match params.as_object() {
                Some(m) if m.is_empty() => Ok(()),
                _ => Err(PreprocError::InvalidParams {
                    name: name.to_string(),
                    message: "operator takes no parameters".into(),
                }),
            }
        };
        let op = match name {
            "identity" => {
                no_params()?;
                PreprocOp::Identity
            }
            "histeq" => {
                no_params()?;
                PreprocOp::HistEq
            }
            "augment" => PreprocOp::Augment(serde_json::from_value(params).map_err(invalid)?),
            "ltp" => PreprocOp::Ltp(serde_json::from_value(params).map_err(invalid)?),
            "threshold" => PreprocOp::Threshold(serde_json::from_value(params).map_err(invalid)?),
            "hybrid" => PreprocOp::Hybrid(serde_json::from_value(params).map_err(invalid)?),
            _ => {
                return Err(PreprocError::UnknownOperator {
                    name: name.to_string(),
                })
            }
        };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<(), PreprocError> {
        match *self {
            PreprocOp::Augment(p) => {
                if !(p.alpha > 0.0 && p.alpha.is_finite()) {
                    return Err(PreprocError::InvalidAlpha(p.alpha));
                }
                if !p.beta.is_finite() {
                    return Err(PreprocError::InvalidBeta(p.beta));
                }
            }
            PreprocOp::Threshold(p) | PreprocOp::Hybrid(p) => {
                if p.block < 3 || p.block % 2 == 0 {
                    return Err(PreprocError::InvalidBlock(p.block));
                }
                if !p.c.is_finite() {
                    return Err(PreprocError::InvalidOffset(p.c));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            PreprocOp::Identity => "identity",
            PreprocOp::Augment(_) => "augment",
            PreprocOp::HistEq => "histeq",
            PreprocOp::Ltp(_) => "ltp",
            PreprocOp::Threshold(_) => "threshold",
            PreprocOp::Hybrid(_) => "hybrid",
        }
    }

    /// Parameters as a JSON object, with every default filled in.
    pub fn params(&self) -> Value {
        let v = match self {
            PreprocOp::Identity | PreprocOp::HistEq => return Value::Object(Default::default()),
            PreprocOp::Augment(p) => serde_json::to_value(p),
            PreprocOp::Ltp(p) => serde_json::to_value(p),
            PreprocOp::Threshold(p) | PreprocOp::Hybrid(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs serialize")
    }

    /// Applies the operator. LTP yields the configured pattern map.
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage, PreprocError> {
        match *self {
            PreprocOp::Identity => Ok(img.clone()),
            PreprocOp::Augment(p) => adjust_brightness_contrast(img, p.alpha, p.beta),
            PreprocOp::HistEq => Ok(histogram_equalize(img)),
            PreprocOp::Ltp(p) => {
                let maps = local_ternary_pattern(img, p.t)?;
                Ok(match p.map {
                    LtpMap::Upper => maps.upper,
                    LtpMap::Lower => maps.lower,
                })
            }
            PreprocOp::Threshold(p) => adaptive_threshold_gaussian(img, p.block, p.c),
            PreprocOp::Hybrid(p) => hybrid_preprocess(img, p.block, p.c),
        }
    }
}
