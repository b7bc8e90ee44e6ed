//! JSON checkpoints for trained classifiers.
//!
//! Floats are written in shortest round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{AdamState, ClassifierModel, TrainConfig};
use crate::error::{Error, Result};
use crate::region::EncodingMode;

pub const CHECKPOINT_FORMAT: &str = "mapmatch-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    /// `[D_in, H1, H2, 1]`, echoed for readers that skip the weights.
    pub dims: Vec<usize>,
    pub encoding_mode: EncodingMode,
    pub gem_p: f64,
    pub model: ClassifierModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_validation_f1: Option<f64>,
    /// Number of completed training epochs behind `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl ModelCheckpoint {
    pub fn new(model: ClassifierModel, encoding_mode: EncodingMode, gem_p: f64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: model.dims(),
            encoding_mode,
            gem_p,
            model,
            train_config: None,
            best_validation_f1: None,
            epoch: None,
            optimizer: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidCheckpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!("unsupported version {}", self.version)));
        }
        if self.dims != self.model.dims() {
            return Err(Error::InvalidCheckpoint(format!(
                "declared dims {:?} disagree with weights {:?}",
                self.dims,
                self.model.dims()
            )));
        }
        if !(self.gem_p.is_finite() && self.gem_p > 0.0) {
            return Err(Error::InvalidCheckpoint(format!("invalid GeM p {}", self.gem_p)));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.check()?;
    super::write_json_compact(path.as_ref(), ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let ckpt: ModelCheckpoint = super::read_json(path).map_err(|e| match e {
        // shape errors surface from the model's TryFrom through serde
        Error::Parse { message, .. } => Error::InvalidCheckpoint(format!("{}: {message}", path.display())),
        other => other,
    })?;
    ckpt.check()?;
    Ok(ckpt)
}
