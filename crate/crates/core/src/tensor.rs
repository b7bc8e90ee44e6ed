//! Dense backbone feature tensors, rectangular regions over them, and the
//! vector math shared by retrieval, encoding and the ablation scorers.
//!
//! Feature values are stored as `f32` (row-major, channel-last). Every
//! reduction accumulates in `f64`.

use crate::error::{Error, Result};

/// Lower clamp applied to activations before exponentiation in GeM pooling.
pub const DEFAULT_GEM_EPS: f64 = 1e-6;

/// GeM exponent used when none is configured.
pub const DEFAULT_GEM_P: f64 = 3.0;

/// A dense `height x width x channels` feature tensor for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
    /// `(width_px, height_px)` of the image the features were computed from.
    source_dims: (u32, u32),
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
        source_dims: (u32, u32),
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDims(format!(
                "feature map {height}x{width}x{channels} has a zero dimension"
            )));
        }
        if source_dims.0 == 0 || source_dims.1 == 0 {
            return Err(Error::InvalidDims(format!(
                "source image dims {}x{} must be positive",
                source_dims.0, source_dims.1
            )));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            source_dims,
        })
    }

    /// Builds a map by evaluating `f(y, x, c)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        source_dims: (u32, u32),
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, values, source_dims)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn source_dims(&self) -> (u32, u32) {
        self.source_dims
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// The channel vector of one cell.
    #[inline]
    pub fn cell(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn full_box(&self) -> GridBox {
        GridBox {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    pub fn region(&self, bbox: GridBox) -> Result<FeatureRegion<'_>> {
        bbox.check_within(self.width, self.height)?;
        Ok(FeatureRegion { map: self, bbox })
    }

    pub fn full_region(&self) -> FeatureRegion<'_> {
        FeatureRegion {
            map: self,
            bbox: self.full_box(),
        }
    }
}

/// Half-open box in feature-cell coordinates: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl GridBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn cells(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_cell(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::DegenerateRegion(format!("{self:?} covers no cells")));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::DegenerateRegion(format!(
                "{self:?} exceeds the {width}x{height} grid"
            )));
        }
        Ok(())
    }
}

/// A borrowed rectangular view into a [`FeatureMap`].
#[derive(Debug, Clone, Copy)]
pub struct FeatureRegion<'a> {
    map: &'a FeatureMap,
    bbox: GridBox,
}

impl<'a> FeatureRegion<'a> {
    pub fn map(&self) -> &'a FeatureMap {
        self.map
    }

    pub fn bbox(&self) -> GridBox {
        self.bbox
    }

    pub fn channels(&self) -> usize {
        self.map.channels
    }

    pub fn cells(&self) -> usize {
        self.bbox.cells()
    }

    /// Iterates over the channel vectors of every covered cell, row by row.
    pub fn iter_cells(&self) -> impl Iterator<Item = &'a [f32]> + '_ {
        let map = self.map;
        let bbox = self.bbox;
        (bbox.y0..bbox.y1).flat_map(move |y| (bbox.x0..bbox.x1).map(move |x| map.cell(y, x)))
    }
}

/// A real vector used both for retrieval descriptors and pooled region vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    values: Vec<f64>,
    normalized: bool,
}

impl DescriptorVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

impl From<Vec<f64>> for DescriptorVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Generalized-mean pooling of a region into one value per channel:
/// `(mean_cells max(v, eps)^p)^(1/p)`.
pub fn gem_pool(region: &FeatureRegion<'_>, p: f64, eps: f64) -> Result<DescriptorVector> {
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::InvalidParameter(format!("GeM exponent p={p} must be finite and > 0")));
    }
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidParameter(format!("GeM eps={eps} must lie in (0, 1e-3]")));
    }
    let cells = region.cells();
    if cells == 0 {
        return Err(Error::DegenerateRegion(format!("{:?} covers no cells", region.bbox())));
    }
    let channels = region.channels();
    let mut acc = vec![0.0f64; channels];
    // p = 1 is the arithmetic mean; skip powf so the result is exact.
    let linear = p == 1.0;
    for cell in region.iter_cells() {
        for (a, &v) in acc.iter_mut().zip(cell) {
            let v = f64::from(v).max(eps);
            *a += if linear { v } else { v.powf(p) };
        }
    }
    let n = cells as f64;
    let pooled: Vec<f64> = acc
        .into_iter()
        .map(|s| if linear { s / n } else { (s / n).powf(1.0 / p) })
        .collect();
    if let Some(c) = pooled.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("GeM output channel {c} overflowed (p={p})")));
    }
    Ok(DescriptorVector::new(pooled))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &DescriptorVector, b: &DescriptorVector) -> Result<f64> {
    l2_distance_slices(a.values(), b.values())
}

pub(crate) fn l2_distance_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity clamped to `[-1, 1]`; errors when either vector is zero.
pub fn cosine_similarity(a: &DescriptorVector, b: &DescriptorVector) -> Result<f64> {
    check_lengths(a.values(), b.values())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Dot product of two vectors already known to be unit length.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_normalize(v: &DescriptorVector) -> Result<DescriptorVector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite("vector norm".into()));
    }
    Ok(DescriptorVector {
        values: v.values.iter().map(|x| x / n).collect(),
        normalized: true,
    })
}
