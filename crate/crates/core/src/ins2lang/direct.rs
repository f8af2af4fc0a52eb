//! Baseline language field learned directly on every Gaussian, with no
//! coupling to the instance field. Used only for ablation runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance_field::sample_pixels;
use crate::linalg;
use crate::optim::Optimizer;
use crate::rasterizer::{RasterConfig, ViewRaster};
use crate::scene::GaussianScene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectConfig {
    pub steps: usize,
    pub samples_per_segment: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            steps: 3_000,
            samples_per_segment: 64,
            learning_rate: 2.5e-3,
            seed: 0,
        }
    }
}

/// Regresses rendered language features onto each sampled pixel's segment
/// embedding (mean absolute error), then normalizes every Gaussian's vector.
/// Returns the scene with its language field replaced and the loss trace.
pub fn fit_direct_language_field(scene: &GaussianScene, cfg: &DirectConfig) -> Result<(GaussianScene, Vec<f64>)> {
    let d = scene.d_l;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field: Vec<f32> = (0..scene.len() * d)
        .map(|_| 0.01 * rng.sample::<f32, _>(StandardNormal))
        .collect();
    let raster_cfg = RasterConfig::default();
    let rasters: Vec<ViewRaster> = scene
        .views
        .iter()
        .map(|v| ViewRaster::new(scene, &v.camera, &raster_cfg))
        .collect();
    if scene.views.iter().all(|v| v.segment_language.is_empty()) {
        return Err(Error::NoSupervision("no view carries segment language".into()));
    }
    let mut opt = Optimizer::adam(cfg.learning_rate, field.len());
    let mut order: Vec<usize> = (0..scene.views.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let v = order[cursor];
        cursor += 1;
        let view = &scene.views[v];
        let mut batch = sample_pixels(view, v, cfg.samples_per_segment, &mut rng);
        batch.samples.retain(|s| view.segment_language.contains_key(&s.segment));
        if batch.samples.is_empty() {
            continue;
        }
        let pixels = batch.pixels();
        let (rendered, _) = rasters[v].forward_pixels(&pixels, &field, d)?;
        let scale = 1.0 / (pixels.len() * d) as f32;
        let mut loss = 0f64;
        let mut upstream = vec![0f32; rendered.len()];
        for (k, s) in batch.samples.iter().enumerate() {
            let target = &view.segment_language[&s.segment];
            for c in 0..d {
                let diff = rendered[k * d + c] - target[c];
                loss += diff.abs() as f64;
                upstream[k * d + c] = diff.signum() * scale * (diff != 0.0) as u8 as f32;
            }
        }
        let loss = loss * scale as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(loss);
        let grad = rasters[v].backward_pixels(&pixels, &upstream, d)?;
        opt.step(&mut field, &grad);
    }
    for row in field.chunks_exact_mut(d) {
        linalg::normalize_in_place(row);
    }
    let mut out = scene.clone();
    out.language = Some(field);
    out.stage.mapped = Some("direct".into());
    Ok((out, losses))
}
