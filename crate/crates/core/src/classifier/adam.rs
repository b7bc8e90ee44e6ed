use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::model::{ClassifierModel, Gradients};
use crate::error::{Error, Result};

/// Per-layer `(weights, bias)` moment estimates.
pub type LayerMoments = (Array2<f64>, Array1<f64>);

/// Adam moment accumulators, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AdamRecord", into = "AdamRecord")]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<LayerMoments>,
    second: Vec<LayerMoments>,
}

impl AdamState {
    pub fn new(model: &ClassifierModel, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || -> Vec<(Array2<f64>, Array1<f64>)> {
            model
                .layers()
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect()
        };
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn with_defaults(model: &ClassifierModel) -> Self {
        Self::new(model, 0.9, 0.999, 1e-8)
    }

    /// First- and second-moment estimates for layer `i`.
    pub fn moments(&self, i: usize) -> (&LayerMoments, &LayerMoments) {
        (&self.first[i], &self.second[i])
    }

    fn check_shapes(&self, model: &ClassifierModel, grads: &Gradients) -> Result<()> {
        let ok = self.first.len() == model.layers().len()
            && grads.layers.len() == model.layers().len()
            && model.layers().iter().zip(&self.first).zip(&grads.layers).all(|((l, m), g)| {
                l.weights.dim() == m.0.dim()
                    && l.bias.len() == m.1.len()
                    && g.0.dim() == m.0.dim()
                    && g.1.len() == m.1.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::DimMismatch("optimizer state, gradients and model disagree in shape".into()))
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, model: &mut ClassifierModel, grads: &Gradients, lr: f64) -> Result<()> {
        self.check_shapes(model, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.first[i];
            let (vw, vb) = &mut self.second[i];
            Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(gw)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(gb)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MomentRecord {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamRecord {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first: Vec<MomentRecord>,
    second: Vec<MomentRecord>,
}

fn to_records(v: Vec<(Array2<f64>, Array1<f64>)>) -> Vec<MomentRecord> {
    v.into_iter()
        .map(|(w, b)| MomentRecord {
            weights: w.outer_iter().map(|r| r.to_vec()).collect(),
            bias: b.to_vec(),
        })
        .collect()
}

fn from_records(v: Vec<MomentRecord>) -> Result<Vec<(Array2<f64>, Array1<f64>)>> {
    v.into_iter()
        .map(|r| {
            let rows = r.weights.len();
            let cols = r.weights.first().map_or(0, Vec::len);
            let w = Array2::from_shape_vec((rows, cols), r.weights.into_iter().flatten().collect())
                .map_err(|e| Error::InvalidCheckpoint(format!("optimizer moments: {e}")))?;
            Ok((w, Array1::from(r.bias)))
        })
        .collect()
}

impl From<AdamState> for AdamRecord {
    fn from(s: AdamState) -> Self {
        AdamRecord {
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
            step: s.step,
            first: to_records(s.first),
            second: to_records(s.second),
        }
    }
}

impl TryFrom<AdamRecord> for AdamState {
    type Error = Error;

    fn try_from(r: AdamRecord) -> Result<Self> {
        let first = from_records(r.first)?;
        let second = from_records(r.second)?;
        let same = first.len() == second.len()
            && first
                .iter()
                .zip(&second)
                .all(|(a, b)| a.0.dim() == b.0.dim() && a.1.len() == b.1.len());
        if !same {
            return Err(Error::InvalidCheckpoint("optimizer moment shapes differ".into()));
        }
        Ok(AdamState {
            beta1: r.beta1,
            beta2: r.beta2,
            epsilon: r.epsilon,
            step: r.step,
            first,
            second,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_like(model: &ClassifierModel, f: impl Fn(usize) -> f64) -> Gradients {
        let mut k = 0;
        Gradients {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    let w = Array2::from_shape_fn(l.weights.raw_dim(), |_| {
                        k += 1;
                        f(k)
                    });
                    let b = Array1::from_shape_fn(l.bias.len(), |_| {
                        k += 1;
                        f(k)
                    });
                    (w, b)
                })
                .collect(),
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = ClassifierModel::init(4, 3, 2, 0.0, 1).unwrap();
        let before = model.clone();
        let mut st = AdamState::with_defaults(&model);
        // seed non-zero moments so decay is observable
        st.first[0].0.fill(1.0);
        st.second[0].0.fill(1.0);
        st.step(&mut model, &grads_like(&before, |_| 0.0), 1e-3).unwrap();
        assert_eq!(st.step, 1);
        assert!(st.first[0].0.iter().all(|&m| (m - 0.9).abs() < 1e-15));
        assert!(st.second[0].0.iter().all(|&v| (v - 0.999).abs() < 1e-15));
        // only layer 0 had momentum; everything else is untouched
        assert_eq!(model.layers()[1], before.layers()[1]);

        let mut fresh = before.clone();
        let mut st = AdamState::with_defaults(&fresh);
        st.step(&mut fresh, &grads_like(&before, |_| 0.0), 1e-3).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut model = ClassifierModel::init(4, 3, 2, 0.0, 1).unwrap();
        let before = model.clone();
        let g = grads_like(&model, |k| if k % 3 == 0 { -0.7 * k as f64 } else { 0.01 * k as f64 });
        let lr = 5e-4;
        let mut st = AdamState::with_defaults(&model);
        st.step(&mut model, &g, lr).unwrap();
        for ((after, prev), (gw, gb)) in model.layers().iter().zip(before.layers()).zip(&g.layers) {
            let deltas = (&after.weights - &prev.weights).into_iter().chain(&after.bias - &prev.bias);
            for (d, gv) in deltas.zip(gw.iter().chain(gb.iter())) {
                // closed form: -lr * g / (|g| + eps)
                let expected = -lr * gv / (gv.abs() + 1e-8);
                assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut model = ClassifierModel::init(4, 3, 2, 0.0, 1).unwrap();
        let other = ClassifierModel::init(5, 3, 2, 0.0, 1).unwrap();
        let mut st = AdamState::with_defaults(&other);
        let g = grads_like(&model, |_| 1.0);
        assert!(st.step(&mut model, &g, 1e-3).is_err());
    }
}
