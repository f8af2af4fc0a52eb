//! Shallow MLP mapping `d_i → 256 → 256 → d_l` with softplus hidden units,
//! trained full-batch on the mean element-wise absolute error.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MappingPairSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::Optimizer;

pub const ACTIVATION: &str = "softplus";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub steps: usize,
    pub learning_rate: f32,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            steps: 30_000,
            learning_rate: 1e-3,
            hidden: vec![256, 256],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpMapping {
    widths: Vec<usize>,
    /// `weights[k]` is `widths[k] × widths[k+1]`.
    weights: Vec<Array2<f32>>,
    biases: Vec<Array1<f32>>,
    /// Per-step training loss; empty for deserialized networks.
    pub losses: Vec<f64>,
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MlpMapping {
    pub fn from_parts(widths: Vec<usize>, weights: Vec<Array2<f32>>, biases: Vec<Array1<f32>>) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        if layers == 0 || weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid("mlp layer count does not match its widths"));
        }
        for k in 0..layers {
            if weights[k].dim() != (widths[k], widths[k + 1]) || biases[k].len() != widths[k + 1] {
                return Err(Error::ShapeMismatch {
                    field: format!("mlp layer {k}"),
                    expected: widths[k] * widths[k + 1],
                    found: weights[k].len(),
                });
            }
            if weights[k].iter().chain(biases[k].iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    field: format!("mlp layer {k}"),
                    index: 0,
                });
            }
        }
        Ok(MlpMapping {
            widths,
            weights,
            biases,
            losses: Vec::new(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Array2<f32>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f32>] {
        &self.biases
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Pre-activations and activations of every layer for a batch.
    fn forward(&self, x: ArrayView2<f32>) -> (Vec<Array2<f32>>, Vec<Array2<f32>>) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = vec![x.to_owned()];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = act[k].dot(w) + b;
            let a = if k + 1 < self.weights.len() { z.mapv(softplus) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    /// Raw network output for an `N × d_i` batch.
    pub fn predict_raw(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let (_, mut act) = self.forward(x);
        act.pop().expect("network has an output layer")
    }

    /// Unit-length output for one input.
    pub fn predict(&self, instance: &[f32]) -> Vec<f32> {
        self.predict_rows(instance)
    }

    /// Unit-length outputs for an `N × d_i` row-major matrix.
    pub fn predict_rows(&self, instance: &[f32]) -> Vec<f32> {
        let n = instance.len() / self.widths[0];
        let x = ArrayView2::from_shape((n, self.widths[0]), instance).expect("row-major input");
        let mut y = self.predict_raw(x);
        for mut row in y.rows_mut() {
            linalg::normalize_in_place(row.as_slice_mut().expect("standard layout"));
        }
        y.into_raw_vec_and_offset().0
    }
}

/// Fits the MLP to `pairs` with Adam; returns the network with its loss trace.
pub fn fit_mlp(pairs: &MappingPairSet, cfg: &MlpConfig) -> Result<MlpMapping> {
    pairs.validate()?;
    if pairs.len() < 2 {
        return Err(Error::invalid("mlp mapping needs at least two pairs"));
    }
    let mut widths = vec![pairs.d_i];
    widths.extend(&cfg.hidden);
    widths.push(pairs.d_l);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for k in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[k], widths[k + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            (bound * (2.0 * rng.random::<f64>() - 1.0)) as f32
        }));
        biases.push(Array1::zeros(fan_out));
    }
    let mut net = MlpMapping::from_parts(widths, weights, biases)?;

    let m = pairs.len();
    let x = ArrayView2::from_shape((m, pairs.d_i), &pairs.instance).expect("pair tensor shape");
    let target = ArrayView2::from_shape((m, pairs.d_l), &pairs.language).expect("pair tensor shape");
    let layers = net.weights.len();
    let mut w_opt: Vec<Optimizer> = net.weights.iter().map(|w| Optimizer::adam(cfg.learning_rate, w.len())).collect();
    let mut b_opt: Vec<Optimizer> = net.biases.iter().map(|b| Optimizer::adam(cfg.learning_rate, b.len())).collect();
    let scale = 1.0 / (m * pairs.d_l) as f32;

    for step in 0..cfg.steps {
        let (pre, act) = net.forward(x);
        let diff = &act[layers] - &target;
        let loss = diff.iter().map(|v| v.abs() as f64).sum::<f64>() * scale as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        net.losses.push(loss);

        let mut delta = diff.mapv(|v| if v > 0.0 { scale } else if v < 0.0 { -scale } else { 0.0 });
        for k in (0..layers).rev() {
            let grad_w = act[k].t().dot(&delta);
            let grad_b = delta.sum_axis(Axis(0));
            if k > 0 {
                let back = delta.dot(&net.weights[k].t());
                delta = back * &pre[k - 1].mapv(sigmoid);
            }
            w_opt[k].step(
                net.weights[k].as_slice_mut().expect("standard layout"),
                grad_w.as_slice().expect("standard layout"),
            );
            b_opt[k].step(
                net.biases[k].as_slice_mut().expect("standard layout"),
                grad_b.as_slice().expect("standard layout"),
            );
        }
    }
    Ok(net)
}
