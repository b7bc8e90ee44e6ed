//! Mini-batch training with early stopping on a validation F1 callback.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::ClassifierModel;
use crate::error::{Error, Result};

/// Which score the validation F1 is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationScore {
    /// `0.5 * (classifier + detector)`.
    #[default]
    Fused,
    ClassifierOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub seed: u64,
    /// Decision threshold for the validation F1.
    pub operating_threshold: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub validation_score: ValidationScore,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            dropout: 0.25,
            batch_size: 64,
            max_epochs: 100,
            patience_epochs: 2,
            seed: 0,
            operating_threshold: 0.25,
            hidden1: 512,
            hidden2: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_score: ValidationScore::Fused,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.patience_epochs < 1 {
            return bad("patience_epochs must be >= 1");
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if self.hidden1 < 1 || self.hidden2 < 1 {
            return bad("hidden sizes must be >= 1");
        }
        if !(self.operating_threshold > 0.0 && self.operating_threshold < 1.0) {
            return bad("operating_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Encodings (rows) with binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    inputs: Array2<f64>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Array2<f64>, labels: &[bool]) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.nrows(),
                actual: labels.len(),
            });
        }
        Ok(Self {
            inputs,
            targets: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimMismatch("training encodings differ in length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let inputs = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_f1: f64,
}

/// A model together with its optimizer, resumable epoch by epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: ClassifierModel,
    optimizer: AdamState,
    config: TrainConfig,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(input_dim: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ClassifierModel::init(input_dim, config.hidden1, config.hidden2, config.dropout, config.seed)?;
        let optimizer = AdamState::new(&model, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
        Ok(Self {
            model,
            optimizer,
            config,
            epochs_done: 0,
        })
    }

    /// Continues from a saved state after `epochs_done` completed epochs.
    pub fn resume(model: ClassifierModel, optimizer: AdamState, epochs_done: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            optimizer,
            config,
            epochs_done,
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn into_parts(self) -> (ClassifierModel, AdamState) {
        (self.model, self.optimizer)
    }

    /// Shuffling and dropout randomness for an epoch depend only on the seed
    /// and the epoch number, so a resumed run replays the same stream.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// One pass over shuffled mini-batches; returns the sample-weighted mean loss.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptySet("training set".into()));
        }
        if data.dim() != self.model.input_dim() {
            return Err(Error::DimMismatch(format!(
                "training encodings have length {} but the model expects {}",
                data.dim(),
                self.model.input_dim()
            )));
        }
        let epoch = self.epochs_done + 1;
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let x = data.inputs.select(Axis(0), batch);
            let y: Vec<f64> = batch.iter().map(|&i| data.targets[i]).collect();
            let (loss, grads) = self.model.loss_and_gradients(x.view(), &y, Some(&mut rng))?;
            self.optimizer.step(&mut self.model, &grads, self.config.learning_rate)?;
            total += loss * batch.len() as f64;
        }
        self.epochs_done = epoch;
        Ok(total / data.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the highest validation F1.
    pub model: ClassifierModel,
    pub optimizer: AdamState,
    pub best_epoch: usize,
    pub best_validation_f1: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains until validation F1 fails to improve for `patience_epochs`
/// consecutive epochs or `max_epochs` is reached. `validate` scores a model
/// snapshot (typically F1 at the operating threshold on fused scores).
pub fn train(
    data: &TrainingSet,
    config: &TrainConfig,
    validate: &mut dyn FnMut(&ClassifierModel) -> Result<f64>,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptySet("training set".into()));
    }
    let mut trainer = Trainer::new(data.dim(), config.clone())?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ClassifierModel, AdamState)> = None;
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        let train_loss = trainer.run_epoch(data)?;
        let epoch = trainer.epochs_done();
        let f1 = validate(trainer.model())?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_f1: f1,
        });
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, epoch, trainer.model().clone(), trainer.optimizer().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience_epochs {
                break;
            }
        }
    }
    let (best_validation_f1, best_epoch, model, optimizer) =
        best.ok_or_else(|| Error::EmptySet("no epochs were run".into()))?;
    Ok(TrainOutcome {
        model,
        optimizer,
        best_epoch,
        best_validation_f1,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> TrainingSet {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0, 0.5]).collect();
        let labels: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        TrainingSet::from_rows(&rows, &labels).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden1: 8,
            hidden2: 4,
            batch_size: 5,
            max_epochs: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stops_on_plateau_and_returns_best_snapshot() {
        let scripted = [0.5, 0.6, 0.6, 0.6, 0.9];
        let mut snapshots = Vec::new();
        let mut calls = 0;
        let out = train(&tiny_set(), &small_config(), &mut |m| {
            snapshots.push(m.clone());
            calls += 1;
            Ok(scripted[calls - 1])
        })
        .unwrap();
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.best_epoch, 2);
        assert_eq!(out.best_validation_f1, 0.6);
        assert_eq!(out.model, snapshots[1]);
        let max = out.history.iter().map(|h| h.validation_f1).fold(f64::MIN, f64::max);
        assert_eq!(out.best_validation_f1, max);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            train(&tiny_set(), &small_config(), &mut |_| Ok(0.5))
                .unwrap()
                .history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let empty = TrainingSet::from_rows(&[], &[]).unwrap();
        assert!(matches!(
            train(&empty, &small_config(), &mut |_| Ok(0.0)),
            Err(Error::EmptySet(_))
        ));
        let cfg = TrainConfig {
            dropout: 1.0,
            ..small_config()
        };
        assert!(matches!(
            train(&tiny_set(), &cfg, &mut |_| Ok(0.0)),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = TrainConfig {
            patience_epochs: 0,
            ..small_config()
        };
        assert!(cfg.validate().is_err());
    }
}
