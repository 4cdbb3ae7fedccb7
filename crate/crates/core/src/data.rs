//! Dataset discovery, stratified splitting, the manifest CSV and the
//! batch pipeline that feeds the network.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, ImageError};
use crate::nn::Tensor;
use crate::preproc::{PreprocError, PreprocOp};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];
/// Batches decoded ahead of the consumer.
pub const PIPELINE_DEPTH: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("no classes found under {0}")]
    NoClasses(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid split fractions {0:?}: each must be positive and they must sum to 1")]
    Fractions([f64; 3]),
    #[error("class {class:?} has {count} entries, fewer than the {needed} splits")]
    ClassTooSmall {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("split {0} has no entries")]
    EmptySplit(Split),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("target size must be positive, got {0}x{1}")]
    TargetSize(usize, usize),
    #[error("unknown split {0:?} (expected train, val or test)")]
    UnknownSplit(String),
    #[error("manifest row {row}: unknown class {class:?}")]
    UnknownClass { row: usize, class: String },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DataError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub class: usize,
    /// `None` until the entry has been assigned by [`stratified_split`] or
    /// came from a pre-split layout.
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn is_split(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.split.is_some())
    }

    pub fn split_entries(&self, split: Split) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .collect()
    }

    /// Entry counts as `[class][train, val, test, unassigned]`.
    pub fn counts(&self) -> Vec<[usize; 4]> {
        let mut counts = vec![[0; 4]; self.classes.len()];
        for e in &self.entries {
            let slot = e.split.map_or(3, |s| s as usize);
            counts[e.class][slot] += 1;
        }
        counts
    }

    pub fn log_counts(&self) {
        for (name, c) in self.classes.iter().zip(self.counts()) {
            info!(
                "class {name}: train {} val {} test {} unassigned {}",
                c[0], c[1], c[2], c[3]
            );
        }
    }

    /// Writes `path,class,split`; unassigned entries get an empty split.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "class", "split"])?;
        for e in &self.entries {
            w.write_record([
                e.path.to_string_lossy().as_ref(),
                self.classes[e.class].as_str(),
                e.split.map_or("", Split::as_str),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a manifest CSV. Classes are the sorted distinct names found.
    pub fn read_csv(path: impl AsRef<Path>, root: impl Into<PathBuf>) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct Row {
            path: PathBuf,
            class: String,
            split: String,
        }
        let mut rows = Vec::new();
        for row in csv::Reader::from_path(path)?.deserialize() {
            let row: Row = row?;
            rows.push(row);
        }
        let classes: Vec<String> = rows
            .iter()
            .map(|r| r.class.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut entries = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            let class = classes
                .binary_search(&r.class)
                .map_err(|_| DataError::UnknownClass {
                    row: i + 1,
                    class: r.class.clone(),
                })?;
            let split = if r.split.is_empty() {
                None
            } else {
                Some(r.split.parse()?)
            };
            entries.push(Entry {
                path: r.path,
                class,
                split,
            });
        }
        Ok(Self {
            root: root.into(),
            classes,
            entries,
        })
    }
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let item = item.map_err(io_err(dir))?;
        let path = item.path();
        if path.is_dir() {
            out.push((item.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodable image files directly inside `dir`, sorted by path.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = item.map_err(io_err(dir))?.path();
        if !path.is_file() || !has_image_extension(&path) {
            continue;
        }
        match image::image_dimensions(&path) {
            Ok(_) => files.push(path),
            Err(e) => warn!("skipping undecodable image {}: {e}", path.display()),
        }
    }
    files.sort();
    Ok(files)
}

/// Builds a manifest from `<root>/<split>/<class>/*` when the root holds
/// `train`, `val` or `test` folders, otherwise from `<root>/<class>/*` with
/// every entry unassigned.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DataError::MissingRoot(root.to_path_buf()));
    }
    let top = sorted_subdirs(root)?;
    let presplit = top.iter().any(|(name, _)| name.parse::<Split>().is_ok());
    // (class name, folder, split)
    let mut folders = Vec::new();
    if presplit {
        for (name, dir) in &top {
            match name.parse::<Split>() {
                Ok(split) => {
                    for (class, cdir) in sorted_subdirs(dir)? {
                        folders.push((class, cdir, Some(split)));
                    }
                }
                Err(_) => warn!("ignoring folder {} next to split folders", dir.display()),
            }
        }
    } else {
        folders.extend(top.into_iter().map(|(class, dir)| (class, dir, None)));
    }
    let classes: Vec<String> = folders
        .iter()
        .map(|(c, _, _)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        return Err(DataError::NoClasses(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    for (class, dir, split) in &folders {
        let files = image_files(dir)?;
        if files.is_empty() {
            warn!("class folder {} has no images", dir.display());
        }
        let idx = classes.binary_search(class).expect("class collected above");
        entries.extend(files.into_iter().map(|path| Entry {
            path,
            class: idx,
            split: *split,
        }));
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        classes,
        entries,
    };
    manifest.log_counts();
    Ok(manifest)
}

/// Assigns every entry to train/val/test, class by class.
///
/// Each class is shuffled, then gets `floor(n * val)` validation and
/// `floor(n * test)` test entries; train takes the rest. Each split is then
/// shuffled on its own so classes interleave.
pub fn stratified_split(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let valid = fractions.iter().all(|f| f.is_finite() && *f > 0.0)
        && (fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(DataError::Fractions(fractions));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<Entry>; 3] = Default::default();
    for (class, name) in manifest.classes.iter().enumerate() {
        let mut members: Vec<&Entry> = manifest
            .entries
            .iter()
            .filter(|e| e.class == class)
            .collect();
        let n = members.len();
        if n < Split::ALL.len() {
            return Err(DataError::ClassTooSmall {
                class: name.clone(),
                count: n,
                needed: Split::ALL.len(),
            });
        }
        members.shuffle(&mut rng);
        // The small epsilon keeps products such as 100 * 0.1 from
        // flooring one below the exact value.
        let take = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let n_val = take(fractions[1]);
        let n_test = take(fractions[2]);
        let n_train = n - n_val - n_test;
        for (i, e) in members.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            parts[split as usize].push(Entry {
                split: Some(split),
                ..e.clone()
            });
        }
    }
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for mut part in parts {
        part.shuffle(&mut rng);
        entries.extend(part);
    }
    let out = DatasetManifest {
        root: manifest.root.clone(),
        classes: manifest.classes.clone(),
        entries,
    };
    out.log_counts();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub epochs: usize,
    pub preproc: PreprocOp,
    pub seed: u64,
    pub shuffle: bool,
}

/// Bilinear resize with half-pixel centers; values stay in `0.0..=255.0`.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Vec<f32> {
    let (sw, sh) = (img.width(), img.height());
    let src = img.data();
    if sw == width && sh == height {
        return src.iter().map(|&v| f32::from(v)).collect();
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sw, width)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sh, height);
        let (r0, r1) = (&src[y0 * sw..(y0 + 1) * sw], &src[y1 * sw..(y1 + 1) * sw]);
        for &(x0, x1, fx) in &cols {
            let top = f32::from(r0[x0]) * (1.0 - fx) + f32::from(r0[x1]) * fx;
            let bottom = f32::from(r1[x0]) * (1.0 - fx) + f32::from(r1[x1]) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Decodes, preprocesses, resizes and scales one image to `[0, 1]`.
pub fn load_image(
    path: &Path,
    op: &PreprocOp,
    height: usize,
    width: usize,
) -> Result<Vec<f32>, DataError> {
    let img = op.apply(&GrayImage::open(path)?)?;
    let mut px = resize_bilinear(&img, width, height);
    for v in &mut px {
        *v = (*v / 255.0).clamp(0.0, 1.0);
    }
    Ok(px)
}

/// Visit order of `len` items for one epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// N×1×H×W, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub paths: Vec<PathBuf>,
}

/// Batches of one split for one epoch, decoded on a background thread up to
/// [`PIPELINE_DEPTH`] batches ahead. Images that fail to load are skipped
/// with a warning and counted.
pub struct BatchStream {
    rx: Receiver<Batch>,
    skipped: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl BatchStream {
    /// Images skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped.load(Ordering::Relaxed)
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let item = self.rx.recv().ok();
        if item.is_none() {
            if let Some(worker) = self.worker.take() {
                let _ = worker.join();
            }
        }
        item
    }
}

pub fn batch_stream(
    manifest: &DatasetManifest,
    split: Split,
    plan: &BatchPlan,
    target: (usize, usize),
    epoch: u64,
) -> Result<BatchStream, DataError> {
    if plan.batch_size == 0 {
        return Err(DataError::BatchSize);
    }
    let (height, width) = target;
    if height == 0 || width == 0 {
        return Err(DataError::TargetSize(height, width));
    }
    let items: Vec<(PathBuf, usize)> = manifest
        .split_entries(split)
        .into_iter()
        .map(|e| (e.path.clone(), e.class))
        .collect();
    if items.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    let order = epoch_order(items.len(), plan.seed, epoch, plan.shuffle);
    let (tx, rx) = sync_channel(PIPELINE_DEPTH);
    let skipped = Arc::new(AtomicUsize::new(0));
    let skipped_w = Arc::clone(&skipped);
    let op = plan.preproc;
    let batch_size = plan.batch_size;
    let worker = std::thread::spawn(move || {
        for chunk in order.chunks(batch_size) {
            let loaded: Vec<_> = chunk
                .par_iter()
                .map(|&i| {
                    let (path, label) = &items[i];
                    (path, *label, load_image(path, &op, height, width))
                })
                .collect();
            let mut data = Vec::with_capacity(chunk.len() * height * width);
            let mut labels = Vec::with_capacity(chunk.len());
            let mut paths = Vec::with_capacity(chunk.len());
            for (path, label, px) in loaded {
                match px {
                    Ok(px) => {
                        data.extend(px);
                        labels.push(label);
                        paths.push(path.clone());
                    }
                    Err(e) => {
                        warn!("skipping {}: {e}", path.display());
                        skipped_w.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            if labels.is_empty() {
                continue;
            }
            let images = Tensor::new(vec![labels.len(), 1, height, width], data)
                .expect("batch buffer matches its shape");
            if tx
                .send(Batch {
                    images,
                    labels,
                    paths,
                })
                .is_err()
            {
                return;
            }
        }
    });
    Ok(BatchStream {
        rx,
        skipped,
        worker: Some(worker),
    })
}
