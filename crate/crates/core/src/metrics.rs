//! Pixel-level evaluation: confusion counts, the derived segmentation
//! metrics, and ROC analysis with two independent AUC routes (trapezoidal
//! integration over the curve and the rank statistic).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixelwise tallies; the positive class is spill (value 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    /// Merges counts from disjoint pixel sets.
    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: self.true_pos + other.true_pos,
            true_neg: self.true_neg + other.true_neg,
            false_pos: self.false_pos + other.false_pos,
            false_neg: self.false_neg + other.false_neg,
        }
    }
}

/// Tallies a binary prediction against a binary ground-truth mask.
pub fn confusion(pred: &Tensor, gt: &Tensor) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "prediction shape {} does not match mask shape {}",
            pred.shape(),
            gt.shape()
        )));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::shape(
            "confusion requires binary tensors (values 0.0 or 1.0)",
        ));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => counts.true_pos += 1,
            (false, false) => counts.true_neg += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
        }
    }
    Ok(counts)
}

/// The derived metric set. `roc_auc` is attached separately since it needs
/// raw scores rather than counts; `degenerate` flags any metric whose
/// denominator was zero (reported as 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub roc_auc: Option<f64>,
    pub degenerate: bool,
}

/// Accuracy, precision, recall, F1, and IoU from confusion counts.
pub fn metrics(counts: &ConfusionCounts) -> Result<MetricsReport> {
    if counts.total() == 0 {
        return Err(Error::data("cannot compute metrics from zero counts"));
    }
    let tp = counts.true_pos as f64;
    let tn = counts.true_neg as f64;
    let fp = counts.false_pos as f64;
    let fal_n = counts.false_neg as f64;
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let accuracy = ratio(tp + tn, tp + tn + fp + fal_n);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fal_n);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let iou = ratio(tp, tp + fp + fal_n);
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        iou,
        roc_auc: None,
        degenerate,
    })
}

/// One operating point of the ROC curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points ordered by descending threshold, from (0,0) to (1,1).
#[derive(Clone, Debug, Default)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Builds the ROC curve over every distinct score threshold (classification
/// rule: `score >= threshold` is positive) and integrates the area under it
/// with the trapezoid rule.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(RocCurve, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "scores ({}) and labels ({}) disagree in length",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data(format!(
            "ROC needs both classes, got {pos} positive and {neg} negative labels"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }

    let mut auc = 0.0;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) / 2.0;
    }
    Ok((RocCurve { points }, auc))
}

/// Independent AUC route: the midrank statistic
/// `(sum of positive midranks - n_pos*(n_pos+1)/2) / (n_pos * n_neg)`.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores and labels disagree in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::data("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Assign midranks (1-based), averaging within tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = ((i + 1) + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub const METRICS_CSV_HEADER: &str = "accuracy,precision,recall,f1,iou,roc_auc";

/// Writes the single-row metrics CSV with the fixed header.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let auc = report
        .roc_auc
        .ok_or_else(|| Error::data("metrics CSV requires roc_auc"))?;
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{METRICS_CSV_HEADER}")?;
    writeln!(
        file,
        "{},{},{},{},{},{}",
        report.accuracy, report.precision, report.recall, report.f1, report.iou, auc
    )?;
    Ok(())
}

/// Writes the ROC curve as `threshold,fpr,tpr` rows.
pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(file, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}
