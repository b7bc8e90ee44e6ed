//! Map-aided refinement of vehicle detections.
//!
//! A query frame's feature map is compared against the feature map of a
//! reference frame retrieved from a prior traverse. Each detection region is
//! pooled in both maps, the pair is scored by a small classifier, and the
//! classifier score is fused with the detector's own confidence.

pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod region;
pub mod retrieval;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
