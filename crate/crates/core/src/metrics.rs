//! Confusion matrices, per-class precision/recall/F1 and one-vs-rest ROC
//! curves, with CSV and SVG export.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{what}: {left} vs {right} values")]
    Length {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("class index {index} out of range for {k} classes")]
    ClassOutOfRange { index: usize, k: usize },
    #[error("AUC undefined: labels contain only {0} samples")]
    SingleClass(&'static str),
    #[error("score {0} is not a finite number")]
    NonFiniteScore(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `counts[t * k + p]` samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds from row-major counts (rows are true classes).
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self, MetricsError> {
        if counts.len() != k * k {
            return Err(MetricsError::Length {
                what: "confusion counts",
                left: counts.len(),
                right: k * k,
            });
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }
}

pub fn confusion(
    preds: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Length {
            what: "predictions vs labels",
            left: preds.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(labels) {
        if let Some(&index) = [p, t].iter().find(|&&i| i >= k) {
            return Err(MetricsError::ClassOutOfRange { index, k });
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// One-vs-rest scores for one class. `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassReport {
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean `2PR / (P + R)`; `None` when `P + R == 0`.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Vec<ClassReport> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.row_sum(c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, support);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) => f1_score(p, r),
                _ => None,
            };
            ClassReport {
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps a threshold down through the distinct scores. Tied scores move
/// the curve in one diagonal step.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length {
            what: "scores vs labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(bad));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 {
        return Err(MetricsError::SingleClass("negative"));
    }
    if neg == 0 {
        return Err(MetricsError::SingleClass("positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut points = vec![(0.0, 0.0)];
    // Twice the area in units of one positive-negative pair; exact in u64.
    let mut area2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos * neg) as f64,
    })
}

/// Trapezoidal area under a list of `(x, y)` points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// One-vs-rest curve per class from an N×K row-major probability matrix.
pub fn one_vs_rest(
    probs: &[f32],
    labels: &[usize],
    k: usize,
) -> Vec<Result<RocCurve, MetricsError>> {
    (0..k)
        .map(|c| {
            if probs.len() != labels.len() * k {
                return Err(MetricsError::Length {
                    what: "probabilities vs labels",
                    left: probs.len(),
                    right: labels.len() * k,
                });
            }
            let scores: Vec<f64> = probs.chunks(k).map(|row| f64::from(row[c])).collect();
            let binary: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_auc(&scores, &binary)
        })
        .collect()
}

/// Unweighted means over the classes where a value is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    /// Classes left out of each mean: precision, recall, f1, auc.
    pub excluded: [usize; 4],
    pub aucs: Vec<Option<f64>>,
}

fn defined_mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => missing += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), missing)
}

pub fn macro_report(reports: &[ClassReport], aucs: &[Option<f64>]) -> MacroReport {
    let (precision, ep) = defined_mean(reports.iter().map(|r| r.precision));
    let (recall, er) = defined_mean(reports.iter().map(|r| r.recall));
    let (f1, ef) = defined_mean(reports.iter().map(|r| r.f1));
    let (auc, ea) = defined_mean(aucs.iter().copied());
    MacroReport {
        precision,
        recall,
        f1,
        auc,
        excluded: [ep, er, ef, ea],
        aucs: aucs.to_vec(),
    }
}

pub const UNDEFINED: &str = "undefined";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.6}"))
}

/// `class,support,recall,precision,f1,auc`, one row per class and a final
/// `macro` row.
pub fn write_report_csv(
    path: impl AsRef<Path>,
    classes: &[String],
    reports: &[ClassReport],
    aucs: &[Option<f64>],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "support", "recall", "precision", "f1", "auc"])?;
    for ((name, r), auc) in classes.iter().zip(reports).zip(aucs) {
        w.write_record([
            name.clone(),
            r.support.to_string(),
            cell(r.recall),
            cell(r.precision),
            cell(r.f1),
            cell(*auc),
        ])?;
    }
    let m = macro_report(reports, aucs);
    let support: u64 = reports.iter().map(|r| r.support).sum();
    w.write_record([
        "macro".to_string(),
        support.to_string(),
        cell(m.recall),
        cell(m.precision),
        cell(m.f1),
        cell(m.auc),
    ])?;
    w.flush()?;
    Ok(())
}

/// `class,fpr,tpr` for every point of every defined curve.
pub fn write_roc_csv(
    path: impl AsRef<Path>,
    classes: &[String],
    curves: &[Option<RocCurve>],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "fpr", "tpr"])?;
    for (name, curve) in classes.iter().zip(curves) {
        for &(x, y) in curve.iter().flat_map(|c| &c.points) {
            w.write_record([name.clone(), format!("{x:.6}"), format!("{y:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG of one ROC curve with labeled 0..1 axes and the chance
/// diagonal.
pub fn roc_svg(class: &str, curve: &RocCurve) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let plot = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x * plot;
    let py = |y: f64| SIZE - MARGIN - y * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#,
            px(t),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            MARGIN - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">True positive rate</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" text-anchor="middle" font-size="14">ROC {} (AUC {:.4})</text>"#,
        SIZE / 2.0,
        xml_escape(class),
        curve.auc
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f5fbf" stroke-width="2"/>"##,
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}
