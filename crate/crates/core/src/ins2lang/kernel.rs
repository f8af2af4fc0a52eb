use crate::error::{Error, Result};
use crate::linalg;

use super::MappingPairSet;

/// Nadaraya-Watson regressor with a Gaussian kernel:
///
/// ```text
/// Φ(I) = Σ_m k(I, I_m) L_m / Σ_m k(I, I_m),   k(a, b) = exp(−‖a − b‖² / 2σ²)
/// ```
///
/// Fitting is just storing the pairs; there are no training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMapping {
    sigma: f32,
    pairs: MappingPairSet,
}

impl KernelMapping {
    pub fn new(pairs: MappingPairSet, sigma: f32) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        pairs.validate()?;
        Ok(KernelMapping { sigma, pairs })
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn pairs(&self) -> &MappingPairSet {
        &self.pairs
    }

    /// Kernel-weighted mean of the pair targets before normalization.
    ///
    /// Exponents are shifted by their maximum, so the largest weight is
    /// exactly 1 and the denominator cannot underflow; a non-finite sum
    /// falls back to the nearest pair.
    pub fn regress_raw(&self, instance: &[f32]) -> Vec<f64> {
        let p = &self.pairs;
        let inv = 1.0 / (2.0 * self.sigma as f64 * self.sigma as f64);
        let logits: Vec<f64> = (0..p.len())
            .map(|m| -sq_dist(instance, p.instance_row(m)) * inv)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0f64; p.d_l];
        let mut total = 0f64;
        for (m, &z) in logits.iter().enumerate() {
            let w = (z - max).exp();
            if w == 0.0 {
                continue;
            }
            total += w;
            for (o, &l) in out.iter_mut().zip(p.language_row(m)) {
                *o += w * l as f64;
            }
        }
        if !(total > 0.0) || !total.is_finite() {
            let nearest = self.nearest(instance);
            return p.language_row(nearest).iter().map(|&v| v as f64).collect();
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }

    /// Unit-length regression output.
    pub fn regress(&self, instance: &[f32]) -> Vec<f32> {
        let raw = self.regress_raw(instance);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            raw.into_iter().map(|v| (v / norm) as f32).collect()
        } else {
            // Targets cancelled out exactly; no direction to keep.
            let mut l = self.pairs.language_row(self.nearest(instance)).to_vec();
            linalg::normalize_in_place(&mut l);
            l
        }
    }

    fn nearest(&self, instance: &[f32]) -> usize {
        (0..self.pairs.len())
            .min_by(|&a, &b| {
                sq_dist(instance, self.pairs.instance_row(a))
                    .total_cmp(&sq_dist(instance, self.pairs.instance_row(b)))
            })
            .expect("pair set is nonempty")
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&[f32], &[f32])]) -> MappingPairSet {
        let mut p = MappingPairSet::new(items[0].0.len(), items[0].1.len());
        for (k, (i, l)) in items.iter().enumerate() {
            p.push(i, l, (0, k as u32 + 1)).unwrap();
        }
        p
    }

    #[test]
    fn single_pair_is_constant() {
        let k = KernelMapping::new(pairs(&[(&[0.0, 0.0], &[0.0, 2.0, 0.0])]), 0.1).unwrap();
        for x in [[0.0, 0.0], [5.0, -3.0], [1e3, 1e3]] {
            assert_eq!(k.regress(&x), vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn equidistant_input_gives_normalized_midpoint() {
        let k = KernelMapping::new(
            pairs(&[(&[1.0, 0.0], &[1.0, 0.0, 0.0]), (&[-1.0, 0.0], &[0.0, 1.0, 0.0])]),
            0.1,
        )
        .unwrap();
        let out = k.regress(&[0.0, 0.7]);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((out[0] - h).abs() < 1e-6 && (out[1] - h).abs() < 1e-6 && out[2] == 0.0);
    }

    #[test]
    fn far_inputs_fall_to_the_nearest_pair() {
        // 1e4 away at σ = 0.1: every unshifted weight would underflow.
        let k = KernelMapping::new(
            pairs(&[(&[0.0], &[1.0, 0.0]), (&[1.0], &[0.0, 1.0])]),
            0.1,
        )
        .unwrap();
        let out = k.regress(&[1e4]);
        assert!((out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bandwidth_must_be_positive() {
        let p = pairs(&[(&[0.0], &[1.0, 0.0])]);
        assert!(KernelMapping::new(p.clone(), 0.0).is_err());
        assert!(KernelMapping::new(p, -1.0).is_err());
        assert!(KernelMapping::new(MappingPairSet::new(1, 2), 0.1).is_err());
    }
}
