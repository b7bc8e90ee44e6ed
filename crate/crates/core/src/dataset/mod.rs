//! On-disk formats: binary feature tensors, detection and annotation JSON,
//! traverse manifests and classifier checkpoints.

mod checkpoint;
mod detections;
mod manifest;
mod tensor_file;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use detections::{
    sanitize_detections, AnnotationFile, Centroid, Detection, DetectionFile, PixelBox, SanitizedDetections,
};
pub use manifest::{
    validate_manifest, ManifestIssue, ManifestReport, QueryFrame, ReferenceFrame, TraverseManifest, ValidatedManifest,
};
pub use tensor_file::{
    decode_feature_map, encode_feature_map, load_descriptor, load_feature_map, save_descriptor, save_feature_map,
    HEADER_LEN, MAGIC, VERSION,
};

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Single-line variant for large numeric payloads.
pub(crate) fn write_json_compact<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
