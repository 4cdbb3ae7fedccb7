//! The `cxr` subcommands as library functions, so tests can drive them
//! without a subprocess.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{
    batch_stream, scan_dataset, stratified_split, BatchPlan, DatasetManifest, Split,
    IMAGE_EXTENSIONS,
};
use crate::image::GrayImage;
use crate::metrics::{
    confusion, one_vs_rest, precision_recall_f1, roc_svg, write_report_csv, write_roc_csv,
    ClassReport, RocCurve,
};
use crate::model::{argmax_rows, build_proposed_cnn_scaled, InputSize, Network};
use crate::nn::{AdamConfig, OptimizerState, Tensor};
use crate::preproc::{local_ternary_pattern, PreprocOp};
use crate::synthetic::write_pattern_dataset;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const INIT_CHECKPOINT: &str = "model_init.ckpt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ROC_FILE: &str = "roc.csv";

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files under `dir`, recursively, sorted.
fn walk_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut items: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    items.sort();
    for path in items {
        if path.is_dir() {
            walk_images(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Applies `op` to one image or every image under a directory, mirroring
/// the tree as PNGs under `out`. LTP writes `<stem>_upper.png` and
/// `<stem>_lower.png`. Returns the written files.
pub fn cmd_preprocess(input: &Path, op: &PreprocOp, out: &Path) -> Result<Vec<PathBuf>> {
    op.validate()?;
    let (base, files) = if input.is_dir() {
        let mut files = Vec::new();
        walk_images(input, &mut files)?;
        (input.to_path_buf(), files)
    } else if input.is_file() {
        let parent = input.parent().unwrap_or(Path::new("")).to_path_buf();
        (parent, vec![input.to_path_buf()])
    } else {
        bail!("input {} does not exist", input.display());
    };
    if files.is_empty() {
        bail!("no images found under {}", input.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = csv::Writer::from_path(out.join("preprocess.csv"))?;
    manifest.write_record(["source", "output", "operator"])?;
    let mut written = Vec::new();
    for src in files {
        let rel = src.strip_prefix(&base).unwrap_or(&src);
        let dest_dir = out.join(rel.parent().unwrap_or(Path::new("")));
        fs::create_dir_all(&dest_dir)?;
        let stem = rel
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let img = match GrayImage::open(&src) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", src.display());
                continue;
            }
        };
        let outputs = match op {
            PreprocOp::Ltp(p) => {
                let maps = local_ternary_pattern(&img, p.t)?;
                vec![
                    (format!("{stem}_upper.png"), maps.upper),
                    (format!("{stem}_lower.png"), maps.lower),
                ]
            }
            _ => vec![(format!("{stem}.png"), op.apply(&img)?)],
        };
        for (name, image) in outputs {
            let dest = dest_dir.join(name);
            image.save_png(&dest)?;
            manifest.write_record([
                src.to_string_lossy().as_ref(),
                dest.to_string_lossy().as_ref(),
                op.name(),
            ])?;
            written.push(dest);
        }
    }
    manifest.flush()?;
    info!("wrote {} images to {}", written.len(), out.display());
    Ok(written)
}

/// Scans `dataset.root` and splits it unless the layout is already split.
pub fn build_manifest(cfg: &RunConfig, seed: u64) -> Result<DatasetManifest> {
    let scanned = scan_dataset(&cfg.dataset.root)?;
    if scanned.is_split() {
        Ok(scanned)
    } else {
        Ok(stratified_split(&scanned, cfg.dataset.fractions, seed)?)
    }
}

/// Writes the split manifest to `<out>/manifest.csv`.
pub fn cmd_split(cfg: &RunConfig, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let seed = seed.unwrap_or(cfg.train.seed);
    let manifest = build_manifest(cfg, seed)?;
    let dir = out.unwrap_or(&cfg.output.dir);
    fs::create_dir_all(dir)?;
    let path = dir.join(MANIFEST_FILE);
    manifest.write_csv(&path)?;
    let mut stdout = std::io::stdout().lock();
    for (name, c) in manifest.classes.iter().zip(manifest.counts()) {
        writeln!(
            stdout,
            "{name}\ttrain {}\tval {}\ttest {}",
            c[0], c[1], c[2]
        )?;
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub log: Vec<EpochRecord>,
    pub classes: Vec<String>,
}

fn accuracy_on(
    net: &Network<f32>,
    manifest: &DatasetManifest,
    split: Split,
    op: &PreprocOp,
    batch_size: usize,
) -> Result<Option<f64>> {
    if manifest.split_entries(split).is_empty() {
        return Ok(None);
    }
    let (probs, labels) = infer(net, manifest, split, op, batch_size)?;
    if labels.is_empty() {
        return Ok(None);
    }
    let preds = argmax_rows(&Tensor::new(vec![labels.len(), net.num_classes()], probs)?);
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Some(correct as f64 / labels.len() as f64))
}

/// Probabilities (row-major N×K) and labels for one split, in manifest order.
fn infer(
    net: &Network<f32>,
    manifest: &DatasetManifest,
    split: Split,
    op: &PreprocOp,
    batch_size: usize,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let input = net.spec().input_size;
    let plan = BatchPlan {
        batch_size,
        epochs: 1,
        preproc: *op,
        seed: 0,
        shuffle: false,
    };
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut stream = batch_stream(manifest, split, &plan, (input.height, input.width), 0)?;
    for batch in stream.by_ref() {
        probs.extend_from_slice(net.forward(&batch.images)?.data());
        labels.extend(batch.labels);
    }
    if stream.skipped() > 0 {
        warn!(
            "{} images of split {split} could not be loaded",
            stream.skipped()
        );
    }
    Ok((probs, labels))
}

/// Trains from a config and writes the checkpoints, training log, manifest
/// and effective config to the output directory.
pub fn cmd_train(cfg: &RunConfig, seed: Option<u64>, out: Option<&Path>) -> Result<TrainSummary> {
    let mut cfg = cfg.clone();
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = out {
        cfg.output.dir = out.to_path_buf();
    }
    cfg.validate()?;
    let seed = cfg.train.seed;
    let op = cfg.preproc_op()?;
    let manifest = build_manifest(&cfg, seed)?;
    let k = manifest.classes.len();
    if let Some(want) = cfg.model.num_classes {
        if want != k {
            bail!("config model.num_classes is {want} but the dataset has {k} classes");
        }
    }
    let effective = cfg.effective(k)?;
    let [height, width] = cfg.model.input_size;
    let spec =
        build_proposed_cnn_scaled(InputSize::gray(height, width), k, cfg.model.width_divisor)?;
    let mut net = Network::<f32>::new(spec, seed)?;
    info!("network with {} parameters, {k} classes", net.num_params());

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(EFFECTIVE_CONFIG), effective.to_json() + "\n")?;
    manifest.write_csv(dir.join(MANIFEST_FILE))?;
    checkpoint::save(&net, dir.join(INIT_CHECKPOINT))?;

    let mut optimizer = OptimizerState::new(AdamConfig::with_learning_rate(cfg.train.lr))?;
    let plan = BatchPlan {
        batch_size: cfg.train.batch_size,
        epochs: cfg.train.epochs,
        preproc: op,
        seed,
        shuffle: true,
    };
    let mut log = csv::Writer::from_path(dir.join(TRAIN_LOG))?;
    log.write_record(["epoch", "mean_loss", "train_accuracy", "val_accuracy"])?;
    let mut records = Vec::with_capacity(plan.epochs);
    for epoch in 1..=plan.epochs {
        let batches = batch_stream(
            &manifest,
            Split::Train,
            &plan,
            (height, width),
            epoch as u64,
        )?;
        let stats = net.train_epoch(batches.map(|b| (b.images, b.labels)), &mut optimizer)?;
        if !stats.mean_loss.is_finite() {
            bail!(
                "training diverged at epoch {epoch}: mean loss {}",
                stats.mean_loss
            );
        }
        let val = accuracy_on(&net, &manifest, Split::Val, &op, plan.batch_size)?;
        let record = EpochRecord {
            epoch,
            mean_loss: stats.mean_loss,
            train_accuracy: stats.accuracy(),
            val_accuracy: val,
        };
        info!(
            "epoch {epoch}/{}: loss {:.4} train acc {:.4} val acc {}",
            plan.epochs,
            record.mean_loss,
            record.train_accuracy,
            val.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
        log.write_record([
            epoch.to_string(),
            format!("{:.6}", record.mean_loss),
            format!("{:.6}", record.train_accuracy),
            val.map_or(String::new(), |v| format!("{v:.6}")),
        ])?;
        log.flush()?;
        records.push(record);
    }
    checkpoint::save(&net, dir.join(CHECKPOINT))?;
    Ok(TrainSummary {
        out_dir: dir.clone(),
        log: records,
        classes: manifest.classes,
    })
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub classes: Vec<String>,
    pub reports: Vec<ClassReport>,
    pub curves: Vec<Option<RocCurve>>,
    pub accuracy: f64,
    pub samples: usize,
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Evaluates a checkpoint on one split and writes `metrics.csv`, `roc.csv`
/// and one `roc_<class>.svg` per class with a defined curve.
///
/// Uses `<output.dir>/manifest.csv` from training when present so the
/// split matches; otherwise scans and splits with the config seed.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint_path: Option<&Path>,
    split: Split,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let dir = out.unwrap_or(&cfg.output.dir).to_path_buf();
    let ckpt = checkpoint_path.map_or_else(|| cfg.output.dir.join(CHECKPOINT), Path::to_path_buf);
    let net = checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let saved = cfg.output.dir.join(MANIFEST_FILE);
    let manifest = if saved.is_file() {
        DatasetManifest::read_csv(&saved, &cfg.dataset.root)?
    } else {
        build_manifest(cfg, cfg.train.seed)?
    };
    let k = manifest.classes.len();
    if net.num_classes() != k {
        bail!(
            "checkpoint predicts {} classes but the dataset has {k}",
            net.num_classes()
        );
    }
    let op = cfg.preproc_op()?;
    let (probs, labels) = infer(&net, &manifest, split, &op, cfg.train.batch_size)?;
    if labels.is_empty() {
        bail!("no images of split {split} could be loaded");
    }
    let preds = argmax_rows(&Tensor::new(vec![labels.len(), k], probs.clone())?);
    let cm = confusion(&preds, &labels, k)?;
    let reports = precision_recall_f1(&cm);
    let curves: Vec<Option<RocCurve>> = one_vs_rest(&probs, &labels, k)
        .into_iter()
        .zip(&manifest.classes)
        .map(|(c, name)| match c {
            Ok(c) => Some(c),
            Err(e) => {
                warn!("class {name}: {e}");
                None
            }
        })
        .collect();
    let aucs: Vec<Option<f64>> = curves.iter().map(|c| c.as_ref().map(|c| c.auc)).collect();

    fs::create_dir_all(&dir)?;
    write_report_csv(dir.join(METRICS_FILE), &manifest.classes, &reports, &aucs)?;
    write_roc_csv(dir.join(ROC_FILE), &manifest.classes, &curves)?;
    for (name, curve) in manifest.classes.iter().zip(&curves) {
        if let Some(curve) = curve {
            fs::write(
                dir.join(format!("roc_{}.svg", file_safe(name))),
                roc_svg(name, curve),
            )?;
        }
    }
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / labels.len() as f64;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "split {split}: {} samples, accuracy {accuracy:.4}",
        labels.len()
    )?;
    for ((name, r), auc) in manifest.classes.iter().zip(&reports).zip(&aucs) {
        let f = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        writeln!(
            stdout,
            "{name}\trecall {}\tprecision {}\tf1 {}\tauc {}",
            f(r.recall),
            f(r.precision),
            f(r.f1),
            f(*auc)
        )?;
    }
    Ok(EvalSummary {
        classes: manifest.classes,
        reports,
        curves,
        accuracy,
        samples: labels.len(),
    })
}

/// Writes the procedural four-class pattern dataset.
pub fn cmd_synth(out: &Path, per_class: usize, size: usize, seed: u64) -> Result<usize> {
    if per_class == 0 || size == 0 {
        bail!("per-class count and size must be positive");
    }
    let written = write_pattern_dataset(out, per_class, size, seed)?;
    info!("wrote {} images to {}", written.len(), out.display());
    Ok(written.len())
}
