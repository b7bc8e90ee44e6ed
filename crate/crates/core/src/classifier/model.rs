use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp on predictions before taking logarithms.
pub const PREDICTION_CLAMP: f64 = 1e-7;

/// A fully connected layer; `weights` is `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn apply(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Map-matching MLP: `D_in -> H1 -> H2 -> 1` with ReLU + dropout between
/// layers and a sigmoid on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct ClassifierModel {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

/// Per-layer intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    /// Pre-activations of every layer, including the output logit.
    pre: Vec<Array2<f64>>,
    /// Hidden activations after ReLU and dropout.
    hidden: Vec<Array2<f64>>,
    /// Scaled keep masks (`0` or `1 / (1 - rate)`); `None` at inference.
    masks: Vec<Option<Array2<f64>>>,
    output: Array1<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }
}

/// Mean-over-batch parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy `-[y ln x + (1 - y) ln(1 - x)]` with `x` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(x: f64, y: f64) -> f64 {
    let x = x.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
    -(y * x.ln() + (1.0 - y) * (1.0 - x).ln())
}

impl ClassifierModel {
    /// Builds a model from explicit layers, checking that dimensions chain
    /// to a scalar output and every parameter is finite.
    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidCheckpoint("model has no layers".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs() == 0 || l.outputs() == 0 {
                return Err(Error::InvalidCheckpoint(format!("layer {i} has a zero dimension")));
            }
            if l.bias.len() != l.outputs() {
                return Err(Error::InvalidCheckpoint(format!(
                    "layer {i}: bias length {} does not match {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::InvalidCheckpoint(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.inputs(),
                    i - 1,
                    layers[i - 1].outputs()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidCheckpoint(format!("layer {i} has non-finite parameters")));
            }
        }
        if layers.last().map(Dense::outputs) != Some(1) {
            return Err(Error::InvalidCheckpoint("final layer must have one output".into()));
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// Uniform He initialisation `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn init(input_dim: usize, hidden1: usize, hidden2: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden1 == 0 || hidden2 == 0 {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [(input_dim, hidden1), (hidden1, hidden2), (hidden2, 1)]
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(layers, dropout_rate)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// `[D_in, H1, ..., 1]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimMismatch(format!(
                "encoding length {cols} does not match model input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass. Dropout is applied after each hidden ReLU only
    /// when `dropout` supplies an RNG; without one the pass is deterministic.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: ArrayView2<'_, f64>,
        mut dropout: Option<&mut R>,
    ) -> Result<ForwardTrace> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut current = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&current.view());
            if i == last {
                pre.push(z);
                break;
            }
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.dropout_rate > 0.0 => {
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            hidden.push(a.clone());
            current = a;
        }
        let output = pre[last].column(0).mapv(sigmoid);
        Ok(ForwardTrace {
            input: input.to_owned(),
            pre,
            hidden,
            masks,
            output,
        })
    }

    /// Inference on a batch of encodings (rows).
    pub fn predict_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward::<ChaCha8Rng>(input, None)?.output)
    }

    /// Inference on one encoding.
    pub fn predict(&self, encoding: &[f64]) -> Result<f64> {
        let x = ArrayView2::from_shape((1, encoding.len()), encoding)
            .map_err(|e| Error::DimMismatch(e.to_string()))?;
        Ok(self.predict_batch(x)?[0])
    }

    /// Backpropagates mean BCE over the traced batch, reusing the trace's
    /// dropout masks.
    pub fn backward(&self, trace: &ForwardTrace, targets: &[f64]) -> Result<Gradients> {
        let n = trace.output.len();
        if targets.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: targets.len(),
            });
        }
        if n == 0 {
            return Err(Error::EmptySet("gradient batch".into()));
        }
        let last = self.layers.len() - 1;
        // d(mean BCE)/d(logit) = (x - y) / n for a sigmoid output.
        let mut delta = Array2::from_shape_fn((n, 1), |(r, _)| (trace.output[r] - targets[r]) / n as f64);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..=last).rev() {
            let layer_input = if i == 0 {
                trace.input.view()
            } else {
                trace.hidden[i - 1].view()
            };
            let dw = delta.t().dot(&layer_input);
            let db = delta.sum_axis(Axis(0));
            grads.push((dw, db));
            if i == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[i].weights);
            let z = &trace.pre[i - 1];
            ndarray::Zip::from(&mut upstream).and(z).for_each(|g, &zv| {
                if zv <= 0.0 {
                    *g = 0.0;
                }
            });
            if let Some(mask) = &trace.masks[i - 1] {
                upstream *= mask;
            }
            delta = upstream;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Mean clamped BCE over a batch together with its gradients.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        input: ArrayView2<'_, f64>,
        targets: &[f64],
        dropout: Option<&mut R>,
    ) -> Result<(f64, Gradients)> {
        let trace = self.forward(input, dropout)?;
        let grads = self.backward(&trace, targets)?;
        let loss = trace
            .output
            .iter()
            .zip(targets)
            .map(|(&x, &y)| bce_loss(x, y))
            .sum::<f64>()
            / targets.len() as f64;
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseRecord {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRecord {
    dropout_rate: f64,
    layers: Vec<DenseRecord>,
}

impl From<ClassifierModel> for ModelRecord {
    fn from(m: ClassifierModel) -> Self {
        ModelRecord {
            dropout_rate: m.dropout_rate,
            layers: m
                .layers
                .into_iter()
                .map(|l| DenseRecord {
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelRecord> for ClassifierModel {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let mut layers = Vec::with_capacity(r.layers.len());
        for (i, l) in r.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|row| row.len() != cols) {
                return Err(Error::InvalidCheckpoint(format!("layer {i}: ragged weight matrix")));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| Error::InvalidCheckpoint(format!("layer {i}: {e}")))?;
            layers.push(Dense {
                weights,
                bias: Array1::from(l.bias),
            });
        }
        ClassifierModel::from_layers(layers, r.dropout_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model(d: usize) -> ClassifierModel {
        let layers = [(d, 3), (3, 2), (2, 1)]
            .into_iter()
            .map(|(i, o)| Dense {
                weights: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
            })
            .collect();
        ClassifierModel::from_layers(layers, 0.25).unwrap()
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let m = zero_model(4);
        for x in [[0.0, 0.0, 0.0, 0.0], [5.0, -3.0, 1e3, 2.0]] {
            assert_eq!(m.predict(&x).unwrap(), 0.5);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = ClassifierModel::init(8, 6, 4, 0.25, 7).unwrap();
        let b = ClassifierModel::init(8, 6, 4, 0.25, 7).unwrap();
        let c = ClassifierModel::init(8, 6, 4, 0.25, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dims(), vec![8, 6, 4, 1]);
    }

    #[test]
    fn init_weights_are_centered() {
        let m = ClassifierModel::init(100, 100, 2, 0.0, 3).unwrap();
        let w = &m.layers()[0].weights;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let bound = (6.0f64 / 100.0).sqrt();
        // std of U(-b, b) is b / sqrt(3)
        let se = bound / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn inference_is_pure() {
        let m = ClassifierModel::init(4, 3, 2, 0.5, 1).unwrap();
        let x = [0.3, -1.0, 2.0, 0.1];
        let a = m.predict(&x).unwrap();
        assert_eq!(a.to_bits(), m.predict(&x).unwrap().to_bits());
        assert!(a > 0.0 && a < 1.0);
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut m = ClassifierModel::init(4, 3, 2, 0.0, 5).unwrap();
        for l in m.layers_mut() {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = [0.7, -0.2, 1.3, -2.0];
        // independent scalar loops
        let mut act: Vec<f64> = x.to_vec();
        for (li, l) in m.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..l.outputs() {
                let mut s = l.bias[o];
                for (i, a) in act.iter().enumerate() {
                    s += l.weights[[o, i]] * a;
                }
                next.push(if li < 2 { s.max(0.0) } else { s });
            }
            act = next;
        }
        let expected = 1.0 / (1.0 + (-act[0]).exp());
        assert!((m.predict(&x).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0, 1.0) < 2e-7);
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        for x in [0.01, 0.3, 0.77, 0.999] {
            assert!((bce_loss(x, 1.0) - bce_loss(1.0 - x, 0.0)).abs() < 1e-12);
            assert!(bce_loss(x, 0.0) >= 0.0);
        }
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn saturated_fit_has_vanishing_gradient() {
        let mut m = zero_model(2);
        m.layers_mut()[2].bias[0] = 40.0;
        let x = array![[1.0, 2.0]];
        let (_, g) = m.loss_and_gradients::<ChaCha8Rng>(x.view(), &[1.0], None).unwrap();
        assert!(g.max_abs() <= 1e-6);
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let m = ClassifierModel::init(3, 5, 4, 0.0, 2).unwrap();
        let x = array![[0.1, 0.5, -0.3], [1.0, -1.0, 0.2]];
        let y = [1.0, 0.0];
        let x2 = ndarray::concatenate![Axis(0), x, x];
        let y2 = [1.0, 0.0, 1.0, 0.0];
        let (_, g1) = m.loss_and_gradients::<ChaCha8Rng>(x.view(), &y, None).unwrap();
        let (_, g2) = m.loss_and_gradients::<ChaCha8Rng>(x2.view(), &y2, None).unwrap();
        for ((w1, b1), (w2, b2)) in g1.layers.iter().zip(&g2.layers) {
            for (a, b) in w1.iter().chain(b1.iter()).zip(w2.iter().chain(b2.iter())) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dropout_scaling_and_mask_reuse() {
        let m = ClassifierModel::init(3, 64, 32, 0.5, 2).unwrap();
        let x = array![[0.1, 0.5, -0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = m.forward(x.view(), Some(&mut rng)).unwrap();
        for mask in t.masks.iter().flatten() {
            assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
            assert!(mask.iter().any(|&v| v == 0.0));
        }
        let again = m.forward(x.view(), Some(&mut ChaCha8Rng::seed_from_u64(4))).unwrap();
        assert_eq!(t.output, again.output);
    }

    #[test]
    fn rejects_broken_chains() {
        let bad = vec![
            Dense {
                weights: Array2::zeros((3, 2)),
                bias: Array1::zeros(2),
            },
            Dense {
                weights: Array2::zeros((1, 3)),
                bias: Array1::zeros(1),
            },
        ];
        assert!(matches!(
            ClassifierModel::from_layers(bad, 0.0),
            Err(Error::InvalidCheckpoint(_))
        ));
        let chain = vec![
            Dense {
                weights: Array2::zeros((3, 2)),
                bias: Array1::zeros(3),
            },
            Dense {
                weights: Array2::zeros((1, 4)),
                bias: Array1::zeros(1),
            },
        ];
        assert!(ClassifierModel::from_layers(chain, 0.0).is_err());
    }
}
