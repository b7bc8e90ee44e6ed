//! The binary map-matching classifier: a three-layer MLP trained with
//! binary cross-entropy and Adam.

mod adam;
mod model;
mod train;

pub use adam::{AdamState, LayerMoments};
pub use model::{bce_loss, sigmoid, ClassifierModel, Dense, ForwardTrace, Gradients, PREDICTION_CLAMP};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome, Trainer, TrainingSet, ValidationScore};
