//! Classification metrics, one-vs-rest ROC curves and split aggregation.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Accuracy, per-category and macro-averaged precision/recall/F1.
/// Precision or recall with a zero denominator is 0, as is F1 when both are.
pub fn compute_metrics(predictions: &[usize], truth: &[usize], n_categories: usize) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if let Some(&bad) = predictions.iter().chain(truth).find(|&&l| l >= n_categories) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {n_categories})"
        )));
    }
    let mut confusion = vec![vec![0usize; n_categories]; n_categories];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_categories).map(|c| confusion[c][c]).sum();

    let mut precision = Vec::with_capacity(n_categories);
    let mut recall = Vec::with_capacity(n_categories);
    let mut f1 = Vec::with_capacity(n_categories);
    for c in 0..n_categories {
        let tp = confusion[c][c];
        let predicted: usize = (0..n_categories).map(|t| confusion[t][c]).sum();
        let support: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, support);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }

    Ok(Metrics {
        accuracy: ratio(correct, truth.len()),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Per category `(fpr, tpr)` points from (0, 0) to (1, 1); `None` when the
    /// category has no positive or no negative samples.
    pub points: Vec<Option<Vec<(f64, f64)>>>,
    pub auc: Vec<Option<f64>>,
    pub macro_auc: f64,
}

impl RocCurve {
    /// Tab-separated `category, fpr, tpr` rows.
    pub fn to_tsv(&self, category_names: &[String]) -> String {
        let mut s = String::from("category\tfpr\ttpr\n");
        for (c, pts) in self.points.iter().enumerate() {
            let name = category_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            for &(fpr, tpr) in pts.iter().flatten() {
                let _ = writeln!(s, "{name}\t{fpr}\t{tpr}");
            }
        }
        s
    }
}

/// One-vs-rest ROC over score matrix rows (`C x M`). Samples with equal
/// scores enter the curve together; AUC is the trapezoidal area.
pub fn roc_one_vs_rest(scores: &DMatrix<f64>, truth: &[usize]) -> Result<RocCurve> {
    let (n_categories, m) = scores.shape();
    if m == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if truth.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: truth.len(),
        });
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= n_categories) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {n_categories})"
        )));
    }
    if truth.iter().all(|&t| t == truth[0]) {
        return Err(Error::InvalidArgument(
            "ROC undefined: all samples belong to one category".into(),
        ));
    }

    let mut points = Vec::with_capacity(n_categories);
    let mut auc = Vec::with_capacity(n_categories);
    for c in 0..n_categories {
        let row: Vec<f64> = scores.row(c).iter().copied().collect();
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        match binary_roc(&row, &positive) {
            Some((pts, area)) => {
                points.push(Some(pts));
                auc.push(Some(area));
            }
            None => {
                points.push(None);
                auc.push(None);
            }
        }
    }
    let defined: Vec<f64> = auc.iter().flatten().copied().collect();
    Ok(RocCurve {
        points,
        auc,
        macro_auc: mean(&defined),
    })
}

/// ROC points and trapezoidal AUC for one binary problem, or `None` when one
/// of the classes is empty.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<(Vec<(f64, f64)>, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *pts.last().expect("curve starts at the origin");
        let x1 = fp as f64 / n_neg as f64;
        let y1 = tp as f64 / n_pos as f64;
        area += (x1 - x0) * (y0 + y1) / 2.0;
        pts.push((x1, y1));
    }
    Some((pts, area))
}

/// Mean and population standard deviation of a scalar over splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let m = mean(values);
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
        MeanStd {
            mean: m,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub best_accuracy: f64,
    pub n_splits: usize,
}

pub fn aggregate_splits(splits: &[Metrics]) -> Result<Aggregate> {
    if splits.is_empty() {
        return Err(Error::InvalidArgument("no splits to aggregate".into()));
    }
    let collect = |f: fn(&Metrics) -> f64| splits.iter().map(f).collect::<Vec<_>>();
    let accuracy = collect(|m| m.accuracy);
    Ok(Aggregate {
        accuracy: MeanStd::of(&accuracy),
        macro_precision: MeanStd::of(&collect(|m| m.macro_precision)),
        macro_recall: MeanStd::of(&collect(|m| m.macro_recall)),
        macro_f1: MeanStd::of(&collect(|m| m.macro_f1)),
        best_accuracy: accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        n_splits: splits.len(),
    })
}
