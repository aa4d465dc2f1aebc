//! The trainable classification head: pooled features → dropout →
//! optional ReLU hidden layer → dense softmax.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{WeightError, WeightStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    GlobalAverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub pooling: Pooling,
    pub dropout_rate: f64,
    pub output_units: usize,
    /// Width of the optional ReLU layer between dropout and the output.
    pub hidden_units: Option<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            pooling: Pooling::GlobalAverage,
            dropout_rate: 0.1,
            output_units: crate::classes::NUM_CLASSES,
            hidden_units: None,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Softmax,
        }
    }
}

/// A fully connected layer with a row-major `inputs × outputs` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Glorot-uniform kernel, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            kernel: (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (xi, row) in x.iter().zip(self.kernel.chunks_exact(self.outputs)) {
            if *xi == 0.0 {
                continue;
            }
            for (yj, w) in y.iter_mut().zip(row) {
                *yj += xi * w;
            }
        }
        y
    }

    fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    pub hidden: Option<Dense>,
    pub output: Dense,
    pub dropout_rate: f64,
}

/// Gradients laid out like the head's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients {
    pub hidden: Option<(Vec<f64>, Vec<f64>)>,
    pub output: (Vec<f64>, Vec<f64>),
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-Σ y·log softmax(z)`, computed stably from logits.
pub fn cross_entropy_from_logits(logits: &[f64], target: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    target.iter().zip(logits).map(|(y, z)| y * (lse - z)).sum()
}

impl DenseHead {
    pub fn new(spec: &HeadSpec, feature_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let (hidden, width) = match spec.hidden_units {
            Some(units) => (Some(Dense::glorot(feature_width, units, rng)), units),
            None => (None, feature_width),
        };
        Self {
            hidden,
            output: Dense::glorot(width, spec.output_units, rng),
            dropout_rate: spec.dropout_rate,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.hidden.as_ref().map_or(self.output.inputs, |h| h.inputs)
    }

    pub fn num_classes(&self) -> usize {
        self.output.outputs
    }

    pub fn param_count(&self) -> usize {
        self.output.param_count() + self.hidden.as_ref().map_or(0, Dense::param_count)
    }

    /// Logits with an optional dropout keep-mask already scaled by 1/(1−rate).
    pub fn logits(&self, features: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
        let dropped: Vec<f64>;
        let x = match mask {
            Some(m) => {
                dropped = features.iter().zip(m).map(|(f, k)| f * k).collect();
                &dropped
            }
            None => features,
        };
        match &self.hidden {
            Some(h) => {
                let a: Vec<f64> = h.forward(x).into_iter().map(|v| v.max(0.0)).collect();
                self.output.forward(&a)
            }
            None => self.output.forward(x),
        }
    }

    /// Inference-mode class probabilities.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features, None))
    }

    /// Inverted-dropout keep mask for one sample.
    pub fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout_rate;
        (0..self.feature_width())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every head parameter.
    pub fn loss_and_gradients(
        &self,
        features: &[Vec<f64>],
        targets: &[Vec<f64>],
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, HeadGradients) {
        assert_eq!(features.len(), targets.len());
        let n = features.len() as f64;
        let mut grads = HeadGradients {
            hidden: self
                .hidden
                .as_ref()
                .map(|h| (vec![0.0; h.kernel.len()], vec![0.0; h.bias.len()])),
            output: (vec![0.0; self.output.kernel.len()], vec![0.0; self.output.bias.len()]),
        };
        let mut loss = 0.0;
        for (i, (f, y)) in features.iter().zip(targets).enumerate() {
            let x: Vec<f64> = match masks {
                Some(m) => f.iter().zip(&m[i]).map(|(a, k)| a * k).collect(),
                None => f.clone(),
            };
            let hidden_act = self
                .hidden
                .as_ref()
                .map(|h| h.forward(&x).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
            let out_in = hidden_act.as_ref().unwrap_or(&x);
            let logits = self.output.forward(out_in);
            loss += cross_entropy_from_logits(&logits, y);
            let delta: Vec<f64> = softmax(&logits).iter().zip(y).map(|(p, t)| (p - t) / n).collect();

            let (gk, gb) = &mut grads.output;
            for (xi, row) in out_in.iter().zip(gk.chunks_exact_mut(self.output.outputs)) {
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }

            if let (Some(h), Some(act), Some((hk, hb))) = (&self.hidden, &hidden_act, grads.hidden.as_mut()) {
                let back: Vec<f64> = (0..h.outputs)
                    .map(|j| {
                        if act[j] <= 0.0 {
                            return 0.0;
                        }
                        let row = &self.output.kernel[j * self.output.outputs..(j + 1) * self.output.outputs];
                        row.iter().zip(&delta).map(|(w, d)| w * d).sum()
                    })
                    .collect();
                for (xi, row) in x.iter().zip(hk.chunks_exact_mut(h.outputs)) {
                    for (g, d) in row.iter_mut().zip(&back) {
                        *g += xi * d;
                    }
                }
                for (g, d) in hb.iter_mut().zip(&back) {
                    *g += d;
                }
            }
        }
        (loss / n, grads)
    }

    /// Parameter slices in a fixed order: hidden kernel, hidden bias,
    /// output kernel, output bias.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            v.push(&mut h.kernel);
            v.push(&mut h.bias);
        }
        v.push(&mut self.output.kernel);
        v.push(&mut self.output.bias);
        v
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            v.push(&h.kernel);
            v.push(&h.bias);
        }
        v.push(&self.output.kernel);
        v.push(&self.output.bias);
        v
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        if let Some(h) = &self.hidden {
            store.insert_f64("hidden/kernel", vec![h.inputs, h.outputs], h.kernel.clone());
            store.insert_f64("hidden/bias", vec![h.outputs], h.bias.clone());
        }
        let o = &self.output;
        store.insert_f64("output/kernel", vec![o.inputs, o.outputs], o.kernel.clone());
        store.insert_f64("output/bias", vec![o.outputs], o.bias.clone());
        store
    }

    pub fn from_store(store: &WeightStore, dropout_rate: f64) -> Result<Self, WeightError> {
        let dense = |prefix: &str| -> Result<Dense, WeightError> {
            let (shape, kernel) = store.f64_tensor(&format!("{prefix}/kernel"))?;
            let (bshape, bias) = store.f64_tensor(&format!("{prefix}/bias"))?;
            if shape.len() != 2 || bshape != [shape[1]] {
                return Err(WeightError::Shape {
                    name: format!("{prefix}/kernel"),
                    expected: vec![shape.first().copied().unwrap_or(0), bshape.first().copied().unwrap_or(0)],
                    found: shape.to_vec(),
                });
            }
            Ok(Dense {
                inputs: shape[0],
                outputs: shape[1],
                kernel: kernel.to_vec(),
                bias: bias.to_vec(),
            })
        };
        let hidden = if store.get("hidden/kernel").is_some() {
            Some(dense("hidden")?)
        } else {
            None
        };
        let output = dense("output")?;
        if let Some(h) = &hidden {
            if h.outputs != output.inputs {
                return Err(WeightError::Format("hidden and output widths disagree".into()));
            }
        }
        Ok(Self {
            hidden,
            output,
            dropout_rate,
        })
    }
}

/// Adam with the Keras update rule and defaults (β1 0.9, β2 0.999, ε 1e-7).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    #[serde(skip)]
    step: u64,
    #[serde(skip)]
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, head: &mut DenseHead, grads: &HeadGradients) {
        let mut flat: Vec<&Vec<f64>> = Vec::with_capacity(4);
        if let Some((k, b)) = &grads.hidden {
            flat.push(k);
            flat.push(b);
        }
        flat.push(&grads.output.0);
        flat.push(&grads.output.1);
        let mut params = head.params_mut();
        assert_eq!(params.len(), flat.len(), "gradient layout does not match head");
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| (vec![0.0; p.len()], vec![0.0; p.len()])).collect();
        }
        self.step += 1;
        let t = self.step as f64;
        let alpha = self.learning_rate * (1.0 - self.beta2.powf(t)).sqrt() / (1.0 - self.beta1.powf(t));
        for ((p, g), (m, v)) in params.iter_mut().zip(flat).zip(self.moments.iter_mut()) {
            for i in 0..p.len() {
                m[i] += (g[i] - m[i]) * (1.0 - self.beta1);
                v[i] += (g[i] * g[i] - v[i]) * (1.0 - self.beta2);
                p[i] -= alpha * m[i] / (v[i].sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn head(hidden: Option<usize>) -> DenseHead {
        let spec = HeadSpec {
            hidden_units: hidden,
            ..HeadSpec::default()
        };
        DenseHead::new(&spec, 6, &mut ChaCha8Rng::seed_from_u64(3))
    }

    fn batch() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let feats = (0..5)
            .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.4).collect())
            .collect();
        let targets = (0..5)
            .map(|i| {
                let mut t = vec![0.0; 3];
                t[i % 3] = 1.0;
                t
            })
            .collect();
        (feats, targets)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, -5.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn parameter_count_without_hidden_layer() {
        let h = DenseHead::new(&HeadSpec::default(), 1280, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(h.param_count(), 1280 * 3 + 3);
    }

    #[test]
    fn gradients_match_central_differences() {
        for hidden in [None, Some(4)] {
            let mut h = head(hidden);
            let (f, t) = batch();
            let (_, grads) = h.loss_and_gradients(&f, &t, None);
            let mut analytic: Vec<f64> = Vec::new();
            if let Some((k, b)) = &grads.hidden {
                analytic.extend(k);
                analytic.extend(b);
            }
            analytic.extend(&grads.output.0);
            analytic.extend(&grads.output.1);
            let eps = 1e-6;
            let mut offset = 0;
            let sizes: Vec<usize> = h.params().iter().map(|p| p.len()).collect();
            for (slot, len) in sizes.into_iter().enumerate() {
                for i in (0..len).step_by(3) {
                    let orig = h.params()[slot][i];
                    h.params_mut()[slot][i] = orig + eps;
                    let up = h.loss_and_gradients(&f, &t, None).0;
                    h.params_mut()[slot][i] = orig - eps;
                    let down = h.loss_and_gradients(&f, &t, None).0;
                    h.params_mut()[slot][i] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let a = analytic[offset + i];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(rel < 1e-3 || (a - numeric).abs() < 1e-9, "slot {slot}[{i}]: {a} vs {numeric}");
                }
                offset += len;
            }
        }
    }

    #[test]
    fn adam_first_step_moves_each_weight_by_learning_rate() {
        // From zero moments the first step is lr·g / (|g| + ε/sqrt(1 − β2)).
        let mut h = head(None);
        let before = h.output.kernel.clone();
        let (f, t) = batch();
        let (_, g) = h.loss_and_gradients(&f, &t, None);
        let mut adam = Adam::new(0.001);
        adam.apply(&mut h, &g);
        for ((a, b), gi) in before.iter().zip(&h.output.kernel).zip(&g.output.0) {
            let expected = 0.001 * gi / (gi.abs() + 1e-7 / (1.0 - 0.999f64).sqrt());
            assert!(((a - b) - expected).abs() < 1e-9, "{} vs {}", a - b, expected);
        }
    }

    #[test]
    fn store_round_trip() {
        for hidden in [None, Some(5)] {
            let h = head(hidden);
            let back = DenseHead::from_store(&h.to_store(), h.dropout_rate).unwrap();
            assert_eq!(back, h);
        }
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let h = head(None);
        let m = h.dropout_mask(&mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12));
    }
}
