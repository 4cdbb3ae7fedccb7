//! Procedural four-class pattern images, used for smoke tests and the
//! overfit check.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{GrayImage, ImageError};

pub const PATTERN_CLASSES: [&str; 4] = ["checker", "disk", "hstripes", "vstripes"];

/// One pattern image. Period, phase, contrast and noise vary with `rng`.
pub fn pattern_image(class: usize, size: usize, rng: &mut impl Rng) -> GrayImage {
    let period = rng.random_range(6..=12) as f64;
    let phase = rng.random_range(0.0..period);
    let lo = rng.random_range(20.0..70.0);
    let hi = rng.random_range(180.0..235.0);
    let radius = rng.random_range(0.2..0.35) * size as f64;
    let (cx, cy) = (
        size as f64 / 2.0 + rng.random_range(-4.0..4.0),
        size as f64 / 2.0 + rng.random_range(-4.0..4.0),
    );
    let noise: Vec<f64> = (0..size * size)
        .map(|_| rng.random_range(-12.0..12.0))
        .collect();
    let on = |v: f64| ((v + phase) / period).floor() as i64 % 2 == 0;
    GrayImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let bright = match class {
            0 => on(fx) == on(fy),
            1 => (fx - cx).hypot(fy - cy) < radius,
            2 => on(fy),
            _ => on(fx),
        };
        let v = if bright { hi } else { lo } + noise[y * size + x];
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("size is positive")
}

/// Writes `per_class` PNGs per pattern into `<root>/<class>/NN.png` and
/// returns the written paths.
pub fn write_pattern_dataset(
    root: impl AsRef<Path>,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, ImageError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut written = Vec::with_capacity(per_class * PATTERN_CLASSES.len());
    for (class, name) in PATTERN_CLASSES.iter().enumerate() {
        let dir = root.as_ref().join(name);
        std::fs::create_dir_all(&dir).map_err(|e| ImageError::Encode {
            path: dir.display().to_string(),
            source: image::ImageError::IoError(e),
        })?;
        for i in 0..per_class {
            let path = dir.join(format!("{i:03}.png"));
            pattern_image(class, size, &mut rng).save_png(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stripes_are_oriented() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = pattern_image(2, 32, &mut rng);
        // Horizontal stripes: row variance small relative to column variance.
        let row_mean = |y: usize| (0..32).map(|x| f64::from(h.get(x, y))).sum::<f64>() / 32.0;
        let col_mean = |x: usize| (0..32).map(|y| f64::from(h.get(x, y))).sum::<f64>() / 32.0;
        let spread = |v: Vec<f64>| {
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(spread((0..32).map(row_mean).collect()) > 100.0);
        assert!(spread((0..32).map(col_mean).collect()) < 30.0);
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_pattern_dataset(a.path(), 2, 16, 9).unwrap();
        let pb = write_pattern_dataset(b.path(), 2, 16, 9).unwrap();
        assert_eq!(pa.len(), 8);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
}
