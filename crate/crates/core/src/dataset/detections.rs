//! Candidate detection and centroid annotation files.
//!
//! Both are JSON objects keyed by frame id:
//!
//! ```json
//! { "frames": { "q0001": [ { "box": [10, 20, 110, 90], "detector_score": 0.42 } ] } }
//! { "frames": { "q0001": [ { "x_px": 60, "y_px": 55 } ] } }
//! ```
//!
//! Refined output reuses the detection layout with the optional
//! `classifier_score`, `fused_score` and `kept` fields filled in.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for PixelBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<PixelBox> for [f64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl PixelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Inclusive containment: points on the boundary count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub detector_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
}

impl Detection {
    pub fn new(bbox: PixelBox, detector_score: f64) -> Self {
        Self {
            bbox,
            detector_score,
            classifier_score: None,
            fused_score: None,
            kept: None,
        }
    }
}

/// Detections after bounds checking for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SanitizedDetections {
    pub detections: Vec<Detection>,
    /// Indices of boxes that were clamped to the image.
    pub clamped: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub frames: BTreeMap<String, Vec<Detection>>,
}

impl DetectionFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        super::read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_json(path.as_ref(), self)
    }

    pub fn frame(&self, frame_id: &str) -> Option<&[Detection]> {
        self.frames.get(frame_id).map(Vec::as_slice)
    }

    /// Validates and clamps one frame's boxes to `image_dims = (width, height)`.
    ///
    /// Boxes partially outside the image are clamped and reported in
    /// [`SanitizedDetections::clamped`]; boxes with no overlap are rejected.
    pub fn sanitized_frame(&self, frame_id: &str, image_dims: (u32, u32)) -> Result<SanitizedDetections> {
        let dets = self
            .frame(frame_id)
            .ok_or_else(|| Error::InvalidDetection(format!("no detections entry for frame {frame_id}")))?;
        sanitize_detections(frame_id, dets, image_dims)
    }
}

pub fn sanitize_detections(
    frame_id: &str,
    dets: &[Detection],
    image_dims: (u32, u32),
) -> Result<SanitizedDetections> {
    let (w, h) = (f64::from(image_dims.0), f64::from(image_dims.1));
    let mut out = Vec::with_capacity(dets.len());
    let mut clamped = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        if !d.bbox.is_well_formed() {
            return Err(Error::InvalidDetection(format!(
                "frame {frame_id} detection {i}: malformed box {:?}",
                d.bbox
            )));
        }
        if !(0.0..=1.0).contains(&d.detector_score) {
            return Err(Error::InvalidDetection(format!(
                "frame {frame_id} detection {i}: detector score {} outside [0, 1]",
                d.detector_score
            )));
        }
        let b = d.bbox;
        let c = PixelBox::new(b.x_min.max(0.0), b.y_min.max(0.0), b.x_max.min(w), b.y_max.min(h));
        if !c.is_well_formed() {
            return Err(Error::InvalidDetection(format!(
                "frame {frame_id} detection {i}: box {:?} lies outside the {w}x{h} image",
                d.bbox
            )));
        }
        if c != b {
            clamped.push(i);
        }
        let mut d = d.clone();
        d.bbox = c;
        out.push(d);
    }
    Ok(SanitizedDetections {
        detections: out,
        clamped,
    })
}

/// One annotated vehicle centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x_px: f64,
    pub y_px: f64,
}

impl Centroid {
    pub fn new(x_px: f64, y_px: f64) -> Self {
        Self { x_px, y_px }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub frames: BTreeMap<String, Vec<Centroid>>,
}

impl AnnotationFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        super::read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_json(path.as_ref(), self)
    }

    pub fn frame(&self, frame_id: &str) -> Option<&[Centroid]> {
        self.frames.get(frame_id).map(Vec::as_slice)
    }

    /// Returns the frame's centroids after checking they lie inside the image.
    pub fn checked_frame(&self, frame_id: &str, image_dims: (u32, u32)) -> Result<&[Centroid]> {
        let pts = self
            .frame(frame_id)
            .ok_or_else(|| Error::MissingAnnotations(frame_id.to_string()))?;
        let (w, h) = (f64::from(image_dims.0), f64::from(image_dims.1));
        for (i, p) in pts.iter().enumerate() {
            if !(p.x_px >= 0.0 && p.x_px <= w && p.y_px >= 0.0 && p.y_px <= h) {
                return Err(Error::InvalidAnnotation(format!(
                    "frame {frame_id} centroid {i} at ({}, {}) outside the {w}x{h} image",
                    p.x_px, p.y_px
                )));
            }
        }
        Ok(pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout() {
        let mut f = DetectionFile::default();
        f.frames.insert(
            "q1".into(),
            vec![Detection::new(PixelBox::new(1.0, 2.0, 3.0, 4.0), 0.5)],
        );
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"frames":{"q1":[{"box":[1.0,2.0,3.0,4.0],"detector_score":0.5}]}}"#);
        let back: DetectionFile = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn sanitize_clamps_and_rejects() {
        let dets = vec![
            Detection::new(PixelBox::new(-5.0, 10.0, 50.0, 60.0), 0.9),
            Detection::new(PixelBox::new(10.0, 10.0, 20.0, 20.0), 0.3),
        ];
        let s = sanitize_detections("f", &dets, (100, 100)).unwrap();
        assert_eq!(s.clamped, vec![0]);
        assert_eq!(s.detections[0].bbox.x_min, 0.0);
        assert_eq!(s.detections[1], dets[1]);

        let outside = vec![Detection::new(PixelBox::new(120.0, 10.0, 150.0, 20.0), 0.3)];
        assert!(sanitize_detections("f", &outside, (100, 100)).is_err());
        let bad_score = vec![Detection::new(PixelBox::new(1.0, 1.0, 2.0, 2.0), 1.5)];
        assert!(sanitize_detections("f", &bad_score, (100, 100)).is_err());
        let inverted = vec![Detection::new(PixelBox::new(5.0, 1.0, 2.0, 2.0), 0.5)];
        assert!(sanitize_detections("f", &inverted, (100, 100)).is_err());
    }

    #[test]
    fn annotations_bounds() {
        let mut a = AnnotationFile::default();
        a.frames.insert("q".into(), vec![Centroid::new(10.0, 10.0)]);
        assert_eq!(a.checked_frame("q", (20, 20)).unwrap().len(), 1);
        assert!(matches!(
            a.checked_frame("q", (5, 20)),
            Err(Error::InvalidAnnotation(_))
        ));
        assert!(matches!(
            a.checked_frame("missing", (20, 20)),
            Err(Error::MissingAnnotations(_))
        ));
    }
}
