//! First-order optimizers over flat `f32` parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    AdaptiveMoment,
    PlainSgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" | "adaptive-moment" => Ok(OptimizerKind::AdaptiveMoment),
            "sgd" | "plain-sgd" => Ok(OptimizerKind::PlainSgd),
            other => Err(format!("unknown optimizer `{other}` (expected adam or sgd)")),
        }
    }
}

/// Adam with bias correction. `step` on a plain-SGD instance skips the moments.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32, len: usize) -> Self {
        let moments = if kind == OptimizerKind::AdaptiveMoment { len } else { 0 };
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn adam(lr: f32, len: usize) -> Self {
        Self::new(OptimizerKind::AdaptiveMoment, lr, len)
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::PlainSgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::AdaptiveMoment => {
                assert_eq!(params.len(), self.m.len());
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t);
                let bc2 = 1.0 - self.beta2.powi(self.t);
                let step = self.lr / bc1;
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= step * *m / ((*v / bc2).sqrt() + self.eps);
                }
            }
        }
    }
}
