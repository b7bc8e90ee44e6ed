//! Score fusion, centroid matching and precision/recall evaluation.

mod pr;

pub use pr::{metrics, pr_curve, ranking_order, EvalConfig, FlaggedDetection, MetricSet, PrCurve, PrPoint};

use serde::{Deserialize, Serialize};

use crate::dataset::{Centroid, PixelBox};
use crate::error::{Error, Result};
use crate::region::EncodingMode;
use crate::tensor::{gem_pool, l2_distance, FeatureRegion};

/// Final decision score: the mean of classifier and detector confidence.
pub fn fuse(classifier_score: f64, detector_score: f64) -> Result<f64> {
    for s in [classifier_score, detector_score] {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::ScoreOutOfRange(s));
        }
    }
    Ok(0.5 * (classifier_score + detector_score))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    /// TP flag per input detection, in input order.
    pub true_positive: Vec<bool>,
    /// For each TP, the index of the claimed centroid.
    pub claimed: Vec<Option<usize>>,
    pub false_negatives: usize,
}

/// One-to-one greedy matching. Detections are visited by descending score
/// (ties by input index); each claims the unclaimed centroid inside its box
/// that is nearest to the box center. Detections claiming nothing are false
/// positives and unclaimed centroids are false negatives.
pub fn match_detections(detections: &[(PixelBox, f64)], centroids: &[Centroid]) -> Result<MatchOutcome> {
    if let Some((i, _)) = detections.iter().enumerate().find(|(_, d)| !d.1.is_finite()) {
        return Err(Error::NonFinite(format!("score of detection {i}")));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .1
            .partial_cmp(&detections[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; centroids.len()];
    let mut claimed = vec![None; detections.len()];
    for i in order {
        let (bbox, _) = &detections[i];
        let (cx, cy) = bbox.center();
        let best = centroids
            .iter()
            .enumerate()
            .filter(|(j, c)| !taken[*j] && bbox.contains(c.x_px, c.y_px))
            .map(|(j, c)| (j, (c.x_px - cx).powi(2) + (c.y_px - cy).powi(2)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        if let Some((j, _)) = best {
            taken[j] = true;
            claimed[i] = Some(j);
        }
    }
    Ok(MatchOutcome {
        true_positive: claimed.iter().map(Option::is_some).collect(),
        false_negatives: taken.iter().filter(|t| !**t).count(),
        claimed,
    })
}

/// Maps a distance into `[0, 1)` monotonically.
pub fn distance_to_score(d: f64) -> f64 {
    d / (1.0 + d)
}

/// Ablation scorer: the larger the pooled query/map difference, the more
/// likely the region holds a dynamic object.
pub fn l2_ablation_score(query: &FeatureRegion<'_>, map: &FeatureRegion<'_>, p: f64, eps: f64) -> Result<f64> {
    if query.channels() != map.channels() {
        return Err(Error::DimMismatch("regions differ in channel count".into()));
    }
    let d = l2_distance(&gem_pool(query, p, eps)?, &gem_pool(map, p, eps)?)?;
    Ok(distance_to_score(d))
}

/// Which scoring system an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemMode {
    /// Learned concatenation classifier fused with the detector.
    Ours,
    /// Raw detector confidence.
    YolopOnly,
    /// Pooled-feature distance, reported fused and raw.
    L2,
    Disparity,
    QueryOnly,
}

impl SystemMode {
    pub const ALL: [SystemMode; 5] = [
        SystemMode::Ours,
        SystemMode::YolopOnly,
        SystemMode::L2,
        SystemMode::Disparity,
        SystemMode::QueryOnly,
    ];

    /// Encoding the mode's classifier must have been trained with.
    pub fn encoding(self) -> Option<EncodingMode> {
        match self {
            SystemMode::Ours => Some(EncodingMode::Concat),
            SystemMode::Disparity => Some(EncodingMode::Disparity),
            SystemMode::QueryOnly => Some(EncodingMode::QueryOnly),
            SystemMode::YolopOnly | SystemMode::L2 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemMode::Ours => "ours",
            SystemMode::YolopOnly => "yolop_only",
            SystemMode::L2 => "l2",
            SystemMode::Disparity => "disparity",
            SystemMode::QueryOnly => "query_only",
        }
    }
}

impl std::fmt::Display for SystemMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SystemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}
