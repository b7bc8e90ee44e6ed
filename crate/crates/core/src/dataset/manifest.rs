//! Traverse manifests pairing query frames with a reference database.
//!
//! Paths inside a manifest are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::detections::{AnnotationFile, DetectionFile};
use super::tensor_file::{load_descriptor, load_feature_map};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub frame_id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor_path: Option<PathBuf>,
    pub submap_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFrame {
    pub frame_id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor_path: Option<PathBuf>,
    pub submap_id: String,
    pub detections_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations_path: Option<PathBuf>,
    /// When set, retrieval is bypassed and this reference is used directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_reference_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraverseManifest {
    /// `(width_px, height_px)`.
    pub image_dims: (u32, u32),
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub reference_frames: Vec<ReferenceFrame>,
    pub query_frames: Vec<QueryFrame>,
}

impl TraverseManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        super::read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_json(path.as_ref(), self)
    }

    pub fn reference(&self, frame_id: &str) -> Option<&ReferenceFrame> {
        self.reference_frames.iter().find(|r| r.frame_id == frame_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestIssue {
    InvalidImageDims,
    NoReferences,
    DuplicateFrameId { list: &'static str, frame_id: String },
    MissingFile { frame_id: String, path: PathBuf },
    Unparseable { frame_id: String, path: PathBuf, reason: String },
    MissingFrameEntry { frame_id: String, path: PathBuf },
    UnknownSubmap { frame_id: String, submap_id: String },
    UnknownPinnedReference { frame_id: String, reference_id: String },
    ShapeMismatch { frame_id: String, reason: String },
    MixedDescriptorSources,
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestIssue::InvalidImageDims => write!(f, "image_dims must be positive"),
            ManifestIssue::NoReferences => write!(f, "reference_frames is empty"),
            ManifestIssue::DuplicateFrameId { list, frame_id } => {
                write!(f, "duplicate frame_id {frame_id:?} in {list}")
            }
            ManifestIssue::MissingFile { frame_id, path } => {
                write!(f, "frame {frame_id}: missing file {}", path.display())
            }
            ManifestIssue::Unparseable {
                frame_id,
                path,
                reason,
            } => write!(f, "frame {frame_id}: cannot parse {}: {reason}", path.display()),
            ManifestIssue::MissingFrameEntry { frame_id, path } => {
                write!(f, "frame {frame_id}: no entry in {}", path.display())
            }
            ManifestIssue::UnknownSubmap {
                frame_id,
                submap_id,
            } => write!(f, "frame {frame_id}: unknown submap_id {submap_id:?}"),
            ManifestIssue::UnknownPinnedReference {
                frame_id,
                reference_id,
            } => write!(f, "frame {frame_id}: pinned reference {reference_id:?} does not exist"),
            ManifestIssue::ShapeMismatch { frame_id, reason } => {
                write!(f, "frame {frame_id}: {reason}")
            }
            ManifestIssue::MixedDescriptorSources => write!(
                f,
                "descriptor_path must be given for every frame or for none"
            ),
        }
    }
}

/// Every problem found while validating a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestReport {
    pub issues: Vec<ManifestIssue>,
}

impl fmt::Display for ManifestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

/// A manifest whose invariants have all been checked.
#[derive(Debug, Clone)]
pub struct ValidatedManifest {
    manifest: TraverseManifest,
    path: PathBuf,
    base_dir: PathBuf,
    feature_shape: (usize, usize, usize),
}

impl ValidatedManifest {
    pub fn manifest(&self) -> &TraverseManifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// `(height_f, width_f, channels)` shared by every feature map.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        self.feature_shape
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// A name for reports: the `name` metadata entry, else the file stem.
    pub fn traverse_name(&self) -> String {
        self.manifest
            .metadata
            .get("name")
            .cloned()
            .or_else(|| self.path.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_default()
    }
}

enum Parsed {
    Detections(DetectionFile),
    Annotations(AnnotationFile),
}

#[derive(Default)]
struct Checker {
    issues: Vec<ManifestIssue>,
    json_cache: HashMap<PathBuf, std::result::Result<Parsed, String>>,
    shape: Option<(usize, usize, usize)>,
    descriptor_len: Option<usize>,
}

impl Checker {
    fn file_missing(&mut self, frame_id: &str, path: &Path) -> bool {
        if path.is_file() {
            return false;
        }
        self.issues.push(ManifestIssue::MissingFile {
            frame_id: frame_id.to_string(),
            path: path.to_path_buf(),
        });
        true
    }

    fn feature(&mut self, frame_id: &str, path: &Path, image_dims: (u32, u32)) {
        if self.file_missing(frame_id, path) {
            return;
        }
        match load_feature_map(path) {
            Ok(fm) => {
                let shape = fm.shape();
                match self.shape {
                    None => self.shape = Some(shape),
                    Some(s) if s != shape => self.issues.push(ManifestIssue::ShapeMismatch {
                        frame_id: frame_id.to_string(),
                        reason: format!("feature shape {shape:?} differs from {s:?}"),
                    }),
                    _ => {}
                }
                if fm.source_dims() != image_dims {
                    self.issues.push(ManifestIssue::ShapeMismatch {
                        frame_id: frame_id.to_string(),
                        reason: format!(
                            "feature source dims {:?} differ from manifest image_dims {:?}",
                            fm.source_dims(),
                            image_dims
                        ),
                    });
                }
            }
            Err(e) => self.unparseable(frame_id, path, e),
        }
    }

    fn descriptor(&mut self, frame_id: &str, path: &Path) {
        if self.file_missing(frame_id, path) {
            return;
        }
        match load_descriptor(path) {
            Ok(d) => match self.descriptor_len {
                None => self.descriptor_len = Some(d.len()),
                Some(n) if n != d.len() => self.issues.push(ManifestIssue::ShapeMismatch {
                    frame_id: frame_id.to_string(),
                    reason: format!("descriptor length {} differs from {n}", d.len()),
                }),
                _ => {}
            },
            Err(e) => self.unparseable(frame_id, path, e),
        }
    }

    fn unparseable(&mut self, frame_id: &str, path: &Path, e: impl ToString) {
        self.issues.push(ManifestIssue::Unparseable {
            frame_id: frame_id.to_string(),
            path: path.to_path_buf(),
            reason: e.to_string(),
        });
    }

    fn parsed(&mut self, path: &Path, annotations: bool) -> &std::result::Result<Parsed, String> {
        self.json_cache.entry(path.to_path_buf()).or_insert_with(|| {
            if annotations {
                AnnotationFile::load(path)
                    .map(Parsed::Annotations)
                    .map_err(|e| e.to_string())
            } else {
                DetectionFile::load(path)
                    .map(Parsed::Detections)
                    .map_err(|e| e.to_string())
            }
        })
    }

    fn detections(&mut self, frame_id: &str, path: &Path, image_dims: (u32, u32)) {
        if self.file_missing(frame_id, path) {
            return;
        }
        let outcome = match self.parsed(path, false) {
            Ok(Parsed::Detections(f)) => match f.frame(frame_id) {
                None => Some(ManifestIssue::MissingFrameEntry {
                    frame_id: frame_id.to_string(),
                    path: path.to_path_buf(),
                }),
                Some(_) => f.sanitized_frame(frame_id, image_dims).err().map(|e| {
                    ManifestIssue::Unparseable {
                        frame_id: frame_id.to_string(),
                        path: path.to_path_buf(),
                        reason: e.to_string(),
                    }
                }),
            },
            Ok(Parsed::Annotations(_)) => Some(ManifestIssue::Unparseable {
                frame_id: frame_id.to_string(),
                path: path.to_path_buf(),
                reason: "file is used both as detections and annotations".into(),
            }),
            Err(reason) => Some(ManifestIssue::Unparseable {
                frame_id: frame_id.to_string(),
                path: path.to_path_buf(),
                reason: reason.clone(),
            }),
        };
        self.issues.extend(outcome);
    }

    fn annotations(&mut self, frame_id: &str, path: &Path, image_dims: (u32, u32)) {
        if self.file_missing(frame_id, path) {
            return;
        }
        let outcome = match self.parsed(path, true) {
            Ok(Parsed::Annotations(f)) => match f.frame(frame_id) {
                None => Some(ManifestIssue::MissingFrameEntry {
                    frame_id: frame_id.to_string(),
                    path: path.to_path_buf(),
                }),
                Some(_) => f.checked_frame(frame_id, image_dims).err().map(|e| {
                    ManifestIssue::Unparseable {
                        frame_id: frame_id.to_string(),
                        path: path.to_path_buf(),
                        reason: e.to_string(),
                    }
                }),
            },
            Ok(Parsed::Detections(_)) => Some(ManifestIssue::Unparseable {
                frame_id: frame_id.to_string(),
                path: path.to_path_buf(),
                reason: "file is used both as detections and annotations".into(),
            }),
            Err(reason) => Some(ManifestIssue::Unparseable {
                frame_id: frame_id.to_string(),
                path: path.to_path_buf(),
                reason: reason.clone(),
            }),
        };
        self.issues.extend(outcome);
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id.to_string());
        }
    }
    dups.into_iter().collect()
}

/// Loads a manifest and checks every invariant, reading (never writing) each
/// referenced file. All problems are collected into one [`ManifestReport`].
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<ValidatedManifest> {
    let path = path.as_ref();
    let manifest = TraverseManifest::load(path)?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    validate_loaded(manifest, path.to_path_buf(), base_dir)
}

pub(crate) fn validate_loaded(
    manifest: TraverseManifest,
    path: PathBuf,
    base_dir: PathBuf,
) -> Result<ValidatedManifest> {
    let mut ck = Checker::default();
    let dims = manifest.image_dims;
    if dims.0 == 0 || dims.1 == 0 {
        ck.issues.push(ManifestIssue::InvalidImageDims);
    }
    if manifest.reference_frames.is_empty() {
        ck.issues.push(ManifestIssue::NoReferences);
    }
    for frame_id in duplicates(manifest.reference_frames.iter().map(|r| r.frame_id.as_str())) {
        ck.issues.push(ManifestIssue::DuplicateFrameId {
            list: "reference_frames",
            frame_id,
        });
    }
    for frame_id in duplicates(manifest.query_frames.iter().map(|q| q.frame_id.as_str())) {
        ck.issues.push(ManifestIssue::DuplicateFrameId {
            list: "query_frames",
            frame_id,
        });
    }

    let with_desc = manifest
        .reference_frames
        .iter()
        .map(|r| r.descriptor_path.is_some())
        .chain(manifest.query_frames.iter().map(|q| q.descriptor_path.is_some()))
        .collect::<BTreeSet<_>>();
    if with_desc.len() > 1 {
        ck.issues.push(ManifestIssue::MixedDescriptorSources);
    }

    let submaps: BTreeSet<&str> = manifest
        .reference_frames
        .iter()
        .map(|r| r.submap_id.as_str())
        .collect();
    let ref_ids: BTreeSet<&str> = manifest
        .reference_frames
        .iter()
        .map(|r| r.frame_id.as_str())
        .collect();

    for r in &manifest.reference_frames {
        ck.feature(&r.frame_id, &base_dir.join(&r.feature_path), dims);
        if let Some(d) = &r.descriptor_path {
            ck.descriptor(&r.frame_id, &base_dir.join(d));
        }
    }
    for q in &manifest.query_frames {
        if !submaps.contains(q.submap_id.as_str()) {
            ck.issues.push(ManifestIssue::UnknownSubmap {
                frame_id: q.frame_id.clone(),
                submap_id: q.submap_id.clone(),
            });
        }
        if let Some(pin) = &q.pinned_reference_id {
            if !ref_ids.contains(pin.as_str()) {
                ck.issues.push(ManifestIssue::UnknownPinnedReference {
                    frame_id: q.frame_id.clone(),
                    reference_id: pin.clone(),
                });
            }
        }
        ck.feature(&q.frame_id, &base_dir.join(&q.feature_path), dims);
        if let Some(d) = &q.descriptor_path {
            ck.descriptor(&q.frame_id, &base_dir.join(d));
        }
        ck.detections(&q.frame_id, &base_dir.join(&q.detections_path), dims);
        if let Some(a) = &q.annotations_path {
            ck.annotations(&q.frame_id, &base_dir.join(a), dims);
        }
    }

    if !ck.issues.is_empty() {
        return Err(Error::Manifest(ManifestReport { issues: ck.issues }));
    }
    Ok(ValidatedManifest {
        manifest,
        path,
        base_dir,
        feature_shape: ck.shape.unwrap_or((0, 0, 0)),
    })
}
