//! From raw detector output to labelled, encodable query/map region pairs.

use serde::{Deserialize, Serialize};

use crate::dataset::{Centroid, Detection, PixelBox};
use crate::error::{Error, Result};
use crate::tensor::{gem_pool, FeatureMap, FeatureRegion, GridBox};

/// How pooled query and map vectors are combined into a classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    /// `[gem(query) ++ gem(map)]`, length `2C`.
    Concat,
    /// `gem(query) - gem(map)`, length `C`.
    Disparity,
    /// `gem(query)`, length `C`; the map is ignored.
    QueryOnly,
}

impl EncodingMode {
    pub fn encoding_len(self, channels: usize) -> usize {
        match self {
            EncodingMode::Concat => 2 * channels,
            EncodingMode::Disparity | EncodingMode::QueryOnly => channels,
        }
    }
}

impl std::fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodingMode::Concat => "concat",
            EncodingMode::Disparity => "disparity",
            EncodingMode::QueryOnly => "query_only",
        })
    }
}

/// Candidate filtering thresholds applied before any scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateFilter {
    /// Minimum detector confidence.
    pub score_floor: f64,
    /// Minimum box area as a fraction of the image area.
    pub min_area_fraction: f64,
}

impl Default for CandidateFilter {
    fn default() -> Self {
        Self {
            score_floor: 0.1,
            min_area_fraction: 0.0008,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDetection {
    /// Index of the detection in the frame's detection list.
    pub index: usize,
    pub pixel_box: PixelBox,
    pub detector_score: f64,
    pub label: Option<bool>,
}

/// Keeps detections with `score >= score_floor` and
/// `area >= min_area_fraction * width * height`, preserving order.
pub fn filter_candidates(
    dets: &[Detection],
    image_dims: (u32, u32),
    filter: &CandidateFilter,
) -> Vec<CandidateDetection> {
    let min_area = filter.min_area_fraction * f64::from(image_dims.0) * f64::from(image_dims.1);
    dets.iter()
        .enumerate()
        .filter(|(_, d)| d.detector_score >= filter.score_floor && d.bbox.area() >= min_area)
        .map(|(index, d)| CandidateDetection {
            index,
            pixel_box: d.bbox,
            detector_score: d.detector_score,
            label: None,
        })
        .collect()
}

fn rescale_axis(lo: f64, hi: f64, px: u32, cells: usize) -> (usize, usize) {
    let (n, d) = (cells as f64, f64::from(px));
    let start = (lo * n / d).floor().max(0.0) as usize;
    let end = ((hi * n / d).ceil().max(0.0) as usize).min(cells);
    let start = start.min(cells);
    if end > start {
        (start, end)
    } else if start >= cells {
        (cells - 1, cells)
    } else {
        (start, start + 1)
    }
}

/// Maps a pixel box onto the feature grid with outward (floor/ceil)
/// rounding. The result is clamped to the grid and always covers at least
/// one cell.
pub fn rescale_box(pixel_box: &PixelBox, image_dims: (u32, u32), grid_dims: (usize, usize)) -> GridBox {
    let (width_f, height_f) = grid_dims;
    let (x0, x1) = rescale_axis(pixel_box.x_min, pixel_box.x_max, image_dims.0, width_f);
    let (y0, y1) = rescale_axis(pixel_box.y_min, pixel_box.y_max, image_dims.1, height_f);
    GridBox::new(x0, y0, x1, y1)
}

/// Cuts the same grid box out of the query and the map feature maps.
pub fn extract_region_pair<'q, 'm>(
    query: &'q FeatureMap,
    map: &'m FeatureMap,
    bbox: GridBox,
) -> Result<(FeatureRegion<'q>, FeatureRegion<'m>)> {
    if query.shape() != map.shape() {
        return Err(Error::DimMismatch(format!(
            "query features {:?} and map features {:?} differ",
            query.shape(),
            map.shape()
        )));
    }
    Ok((query.region(bbox)?, map.region(bbox)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingVector {
    pub values: Vec<f64>,
    pub mode: EncodingMode,
}

/// Combines already pooled query and map vectors according to `mode`.
pub fn encode_pooled(pooled_query: &[f64], pooled_map: &[f64], mode: EncodingMode) -> Result<EncodingVector> {
    if pooled_query.len() != pooled_map.len() {
        return Err(Error::LengthMismatch {
            expected: pooled_query.len(),
            actual: pooled_map.len(),
        });
    }
    let values = match mode {
        EncodingMode::Concat => pooled_query.iter().chain(pooled_map).copied().collect(),
        EncodingMode::Disparity => pooled_query.iter().zip(pooled_map).map(|(q, m)| q - m).collect(),
        EncodingMode::QueryOnly => pooled_query.to_vec(),
    };
    Ok(EncodingVector { values, mode })
}

/// GeM-pools both regions and builds the classifier input.
pub fn build_encoding(
    query: &FeatureRegion<'_>,
    map: &FeatureRegion<'_>,
    mode: EncodingMode,
    p: f64,
    eps: f64,
) -> Result<EncodingVector> {
    if query.channels() != map.channels() {
        return Err(Error::DimMismatch(format!(
            "query region has {} channels, map region {}",
            query.channels(),
            map.channels()
        )));
    }
    let q = gem_pool(query, p, eps)?;
    if mode == EncodingMode::QueryOnly {
        return Ok(EncodingVector {
            values: q.into_values(),
            mode,
        });
    }
    let m = gem_pool(map, p, eps)?;
    encode_pooled(q.values(), m.values(), mode)
}

/// Labels every candidate independently: positive iff its box contains at
/// least one annotated centroid (boundary inclusive).
pub fn label_candidates(cands: &mut [CandidateDetection], centroids: &[Centroid]) {
    for c in cands {
        c.label = Some(centroids.iter().any(|p| c.pixel_box.contains(p.x_px, p.y_px)));
    }
}
