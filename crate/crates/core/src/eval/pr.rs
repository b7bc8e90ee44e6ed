//! Threshold-swept precision/recall curves and their summary statistics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A detection whose TP/FP status has already been decided by matching.
#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedDetection {
    pub frame_id: String,
    pub index: usize,
    pub score: f64,
    pub true_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Curve points in order of decreasing threshold, one per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub total_gt: usize,
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Decision threshold on the final score.
    pub operating_threshold: f64,
    pub target_recall: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            operating_threshold: 0.25,
            target_recall: 0.95,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.operating_threshold > 0.0 && self.operating_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "operating threshold {} outside (0, 1)",
                self.operating_threshold
            )));
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target recall {} outside (0, 1]",
                self.target_recall
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1_at_tau: f64,
    pub auc: f64,
    pub max_f1: f64,
    pub precision_at_recall: f64,
    /// False when the curve never reaches the target recall; the precision
    /// is then taken at the maximum recall achieved.
    pub target_recall_reached: bool,
    pub tp_at_tau: usize,
    pub fp_at_tau: usize,
    pub total_gt: usize,
}

pub(crate) fn f1_from_counts(tp: usize, fp: usize, total_gt: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let fn_ = total_gt - tp;
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Global ordering used for curve assembly: score descending, then frame id,
/// then detection index.
pub fn ranking_order(a: &FlaggedDetection, b: &FlaggedDetection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.frame_id.cmp(&b.frame_id))
        .then_with(|| a.index.cmp(&b.index))
}

pub fn pr_curve(detections: &[FlaggedDetection], total_gt: usize) -> Result<PrCurve> {
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    if let Some(d) = detections.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite(format!(
            "score of detection {} in frame {}",
            d.index, d.frame_id
        )));
    }
    let mut sorted: Vec<&FlaggedDetection> = detections.iter().collect();
    sorted.sort_by(|a, b| ranking_order(a, b));
    let tp_total = sorted.iter().filter(|d| d.true_positive).count();
    if tp_total > total_gt {
        return Err(Error::InvalidParameter(format!(
            "{tp_total} true positives exceed {total_gt} ground-truth objects"
        )));
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, d) in sorted.iter().enumerate() {
        if d.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = sorted.get(i + 1).is_none_or(|n| n.score != d.score);
        if last_of_score {
            points.push(PrPoint {
                threshold: d.score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / total_gt as f64,
                tp,
                fp,
            });
        }
    }
    Ok(PrCurve { total_gt, points })
}

impl PrCurve {
    /// Counts for detections with `score >= threshold`.
    pub fn counts_at(&self, threshold: f64) -> (usize, usize) {
        self.points
            .iter()
            .take_while(|p| p.threshold >= threshold)
            .last()
            .map_or((0, 0), |p| (p.tp, p.fp))
    }

    /// CSV with a header row, one line per curve point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,tp,fp\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{},{}\n", p.threshold, p.precision, p.recall, p.tp, p.fp));
        }
        s
    }
}

pub fn metrics(curve: &PrCurve, cfg: &EvalConfig) -> MetricSet {
    let total_gt = curve.total_gt;
    let (tp_at_tau, fp_at_tau) = curve.counts_at(cfg.operating_threshold);
    let f1_at_tau = f1_from_counts(tp_at_tau, fp_at_tau, total_gt);
    let max_f1 = curve
        .points
        .iter()
        .map(|p| f1_from_counts(p.tp, p.fp, total_gt))
        .fold(0.0, f64::max);

    // Trapezoid over (recall, precision), anchored at recall 0 with the
    // precision of the highest-scoring point. Points are already in
    // non-decreasing recall order.
    let auc = match curve.points.first() {
        None => 0.0,
        Some(first) => {
            let mut area = 0.0;
            let (mut r0, mut p0) = (0.0, first.precision);
            for p in &curve.points {
                area += (p.recall - r0) * (p.precision + p0) * 0.5;
                r0 = p.recall;
                p0 = p.precision;
            }
            area
        }
    };

    let (precision_at_recall, target_recall_reached) =
        match curve.points.iter().find(|p| p.recall >= cfg.target_recall) {
            Some(p) => (p.precision, true),
            None => {
                let max_recall = curve.points.iter().map(|p| p.recall).fold(0.0, f64::max);
                let p = curve
                    .points
                    .iter()
                    .find(|p| p.recall == max_recall)
                    .map_or(0.0, |p| p.precision);
                (p, false)
            }
        };

    MetricSet {
        f1_at_tau,
        auc,
        max_f1,
        precision_at_recall,
        target_recall_reached,
        tp_at_tau,
        fp_at_tau,
        total_gt,
    }
}
