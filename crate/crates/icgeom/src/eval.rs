//! Evaluation: row-normalized confusion matrix, one-vs-rest ROC curves with
//! trapezoidal AUC, accuracy, and the invariance-check harness.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomfeat::per_point_features;
use crate::net::{model_forward, param_count, Model};
use crate::pointcloud::{normalize_unit_sphere, PointCloud};
use crate::train::{argmax, softmax};

/// Logit deviations above this fail the invariance check.
pub const INVARIANCE_TOL: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Row-normalized confusion matrix: `rates[actual * classes + predicted]`.
/// Rows with zero support stay all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub rates: Vec<f64>,
    pub support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn rate(&self, actual: usize, predicted: usize) -> f64 {
        self.rates[actual * self.classes + predicted]
    }

    pub fn row(&self, actual: usize) -> &[f64] {
        &self.rates[actual * self.classes..(actual + 1) * self.classes]
    }
}

/// Counts `(actual, predicted)` pairs and normalizes each nonzero row by its
/// support.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut counts = vec![0usize; classes * classes];
    let mut support = vec![0usize; classes];
    for (&p, &a) in predictions.iter().zip(labels) {
        if p >= classes {
            return Err(Error::ClassOutOfRange { id: p, classes });
        }
        if a >= classes {
            return Err(Error::ClassOutOfRange { id: a, classes });
        }
        counts[a * classes + p] += 1;
        support[a] += 1;
    }
    let mut rates = vec![0.0f64; classes * classes];
    for a in 0..classes {
        if support[a] > 0 {
            let inv = 1.0 / support[a] as f64;
            for p in 0..classes {
                rates[a * classes + p] = counts[a * classes + p] as f64 * inv;
            }
        }
    }
    Ok(ConfusionMatrix {
        classes,
        rates,
        support,
    })
}

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

/// ROC curve from a descending threshold sweep, tied scores grouped into a
/// single step. Starts at (0,0), ends at (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` per threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over the scores of one class; `is_positive[i]` marks
/// whether sample `i` belongs to that class.
pub fn roc_curve(scores: &[f64], is_positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_positive.len() {
        return Err(Error::LengthMismatch {
            predictions: scores.len(),
            labels: is_positive.len(),
        });
    }
    let pos = is_positive.iter().filter(|p| **p).count();
    let neg = is_positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::RocSingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = Vec::with_capacity(scores.len() + 1);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<f64> = None;
    for &i in &order {
        if prev != Some(scores[i]) {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
            prev = Some(scores[i]);
        }
        if is_positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));

    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// Everything `evaluate` produces.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// One-vs-rest curve per class; `None` when the dataset lacks positives
    /// or negatives for that class.
    pub roc: Vec<Option<RocCurve>>,
    pub parameter_count: usize,
}

/// Evaluation against an arbitrary scoring function (used for oracle tests
/// as well as real models). The function returns logits per cloud.
pub fn evaluate_with<F>(
    logits_fn: F,
    dataset: &[PointCloud],
    classes: usize,
    parameter_count: usize,
) -> Result<EvalReport>
where
    F: Fn(&PointCloud) -> Result<Vec<f64>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let labels: Vec<usize> = dataset
        .iter()
        .map(|c| c.label.ok_or(Error::MissingLabel))
        .collect::<Result<_>>()?;
    for &l in &labels {
        if l >= classes {
            return Err(Error::ClassOutOfRange { id: l, classes });
        }
    }

    let probs: Vec<Vec<f64>> = dataset
        .par_iter()
        .map(|cloud| {
            let logits = logits_fn(cloud)?;
            if logits.len() != classes {
                return Err(Error::ShapeMismatch {
                    what: "logits",
                    expected: classes,
                    actual: logits.len(),
                });
            }
            Ok(softmax(&logits))
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;
    let confusion = confusion_matrix(&predictions, &labels, classes)?;

    let roc = (0..classes)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let is_pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            match roc_curve(&scores, &is_pos) {
                Ok(curve) => Some(curve),
                Err(Error::RocSingleClass) => None,
                Err(_) => None,
            }
        })
        .collect();

    Ok(EvalReport {
        accuracy,
        confusion,
        roc,
        parameter_count,
    })
}

/// Runs the model over every cloud (optionally normalizing first, matching
/// the preprocessing pipeline) and aggregates all metrics.
pub fn evaluate(model: &Model, dataset: &[PointCloud], normalize: bool) -> Result<EvalReport> {
    let classes = model.config.classes;
    let k = model.config.k;
    evaluate_with(
        |cloud| pipeline_logits(model, cloud, normalize, k),
        dataset,
        classes,
        param_count(model),
    )
}

/// The inference pipeline: optional unit-sphere normalization, descriptor
/// extraction, forward pass.
pub fn pipeline_logits(
    model: &Model,
    cloud: &PointCloud,
    normalize: bool,
    k_geom: usize,
) -> Result<Vec<f64>> {
    let prepared = if normalize {
        normalize_unit_sphere(cloud)
    } else {
        cloud.clone()
    };
    let g = per_point_features(&prepared, k_geom)?;
    let (logits, _) = model_forward(model, &prepared, &g)?;
    Ok(logits)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Nine significant digits, scientific notation.
fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

impl EvalReport {
    /// Writes `confusion.csv`, `roc_class_<c>.csv` and `summary.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut confusion = String::new();
        for a in 0..self.confusion.classes {
            let row: Vec<String> = self.confusion.row(a).iter().map(|v| sig9(*v)).collect();
            confusion.push_str(&row.join(","));
            confusion.push('\n');
        }
        let path = dir.join("confusion.csv");
        fs::write(&path, confusion).map_err(|e| Error::io(&path, e))?;

        for (c, curve) in self.roc.iter().enumerate() {
            let Some(curve) = curve else { continue };
            let mut text = String::from("fpr,tpr\n");
            for (fpr, tpr) in &curve.points {
                text.push_str(&format!("{},{}\n", sig9(*fpr), sig9(*tpr)));
            }
            let path = dir.join(format!("roc_class_{c}.csv"));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }

        let aucs: Vec<serde_json::Value> = self
            .roc
            .iter()
            .map(|r| match r {
                Some(curve) => serde_json::json!(curve.auc),
                None => serde_json::Value::Null,
            })
            .collect();
        let summary = serde_json::json!({
            "accuracy": self.accuracy,
            "per_class_auc": aucs,
            "parameter_count": self.parameter_count,
        });
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Dataset(format!("summary serialization failed: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Invariance check
// ---------------------------------------------------------------------------

/// Outcome of the invariance harness. Translation and scaling deviations
/// only gate the result when normalization is on; with normalization off
/// they are reported for inspection (the center path of the first edge
/// layer is expected to break exact translation invariance).
#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub trials: usize,
    pub normalize: bool,
    pub max_permutation_dev: f64,
    pub max_translation_dev: f64,
    pub max_scale_dev: f64,
    pub tolerance: f64,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        let gated = if self.normalize {
            self.max_translation_dev.max(self.max_scale_dev)
        } else {
            0.0
        };
        self.max_permutation_dev <= self.tolerance && gated <= self.tolerance
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs `trials` random permutations, translations (offset norm up to 100)
/// and uniform scalings (log-uniform in [1/4, 4]) through the inference
/// pipeline and records the worst logit deviation per transform kind.
pub fn invariance_check(
    model: &Model,
    cloud: &PointCloud,
    trials: usize,
    seed: u64,
    normalize: bool,
) -> Result<InvarianceReport> {
    let k = model.config.k;
    let base = pipeline_logits(model, cloud, normalize, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut perm_dev = 0.0f64;
    let mut trans_dev = 0.0f64;
    let mut scale_dev = 0.0f64;
    let n = cloud.len();
    for _ in 0..trials {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let logits = pipeline_logits(model, &cloud.permuted(&perm), normalize, k)?;
        perm_dev = perm_dev.max(max_abs_diff(&base, &logits));

        let dir = {
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let y: f64 = rng.gen_range(-1.0..=1.0);
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let norm = (x * x + y * y + z * z).sqrt().max(1e-9);
            [x / norm, y / norm, z / norm]
        };
        let mag: f64 = rng.gen_range(0.0..=100.0);
        let offset = [dir[0] * mag, dir[1] * mag, dir[2] * mag];
        let logits = pipeline_logits(model, &cloud.translated(offset), normalize, k)?;
        trans_dev = trans_dev.max(max_abs_diff(&base, &logits));

        let s = 4.0f64.powf(rng.gen_range(-1.0..=1.0));
        let logits = pipeline_logits(model, &cloud.scaled(s), normalize, k)?;
        scale_dev = scale_dev.max(max_abs_diff(&base, &logits));
    }

    Ok(InvarianceReport {
        trials,
        normalize,
        max_permutation_dev: perm_dev,
        max_translation_dev: trans_dev,
        max_scale_dev: scale_dev,
        tolerance: INVARIANCE_TOL,
    })
}
