//! Contrastive training of the per-Gaussian instance field.
//!
//! Each step renders instance features for one view at a sample of labeled
//! pixels, scores every sample against the mean feature (centroid) of every
//! sampled segment with a dot-product softmax, and pushes the gradient back
//! through the rasterizer onto the Gaussians:
//!
//! ```text
//! loss = −(1/|Ω|) Σ_j Σ_{u∈Ω_j} log( exp(I_u·Ī_j) / Σ_l exp(I_u·Ī_l) )
//! ```
//!
//! Centroids depend on the samples, so gradients flow through both the
//! direct `I_u` term and every centroid.

use std::collections::BTreeMap;

use log::debug;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rasterizer::{RasterConfig, ViewRaster};
use crate::scene::{GaussianScene, ViewSupervision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub samples_per_segment: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 30_000,
            samples_per_segment: 64,
            learning_rate: 2.5e-3,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 3k-step preset.
    pub fn fast() -> Self {
        TrainConfig {
            steps: 3_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_segment < 2 {
            return Err(Error::invalid("samples_per_segment must be >= 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelSample {
    /// Row-major pixel index.
    pub pixel: u32,
    pub segment: u32,
}

/// Sampled pixels of one view, grouped by segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelSampleBatch {
    pub view_index: usize,
    pub samples: Vec<PixelSample>,
    /// Segment ID → positions into `samples`.
    pub by_segment: BTreeMap<u32, Vec<usize>>,
}

impl PixelSampleBatch {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.pixel).collect()
    }
}

/// Draws up to `per_segment` pixels uniformly without replacement from every
/// nonzero segment of `view`. Segments with fewer than two pixels are skipped.
pub fn sample_pixels<R: Rng + ?Sized>(
    view: &ViewSupervision,
    view_index: usize,
    per_segment: usize,
    rng: &mut R,
) -> PixelSampleBatch {
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (p, &id) in view.instance_mask.iter().enumerate() {
        if id != 0 {
            members.entry(id).or_default().push(p as u32);
        }
    }
    let mut batch = PixelSampleBatch {
        view_index,
        ..Default::default()
    };
    for (segment, pixels) in members {
        if pixels.len() < 2 {
            continue;
        }
        let take = per_segment.min(pixels.len());
        let mut picked: Vec<u32> = index::sample(rng, pixels.len(), take)
            .into_iter()
            .map(|k| pixels[k])
            .collect();
        picked.sort_unstable();
        let slots = batch.by_segment.entry(segment).or_default();
        for pixel in picked {
            slots.push(batch.samples.len());
            batch.samples.push(PixelSample { pixel, segment });
        }
    }
    batch
}

/// Loss value and its gradient with respect to each sample's feature.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    /// `|samples| × dim`, aligned with `batch.samples`.
    pub grad: Vec<f32>,
}

/// Contrastive loss over per-sample feature rows (`|samples| × dim`).
pub fn infonce_loss_rows(features: &[f32], dim: usize, batch: &PixelSampleBatch) -> Result<InfoNce> {
    let n = batch.samples.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "contrastive loss needs at least two pixel samples, got {n}"
        )));
    }
    if features.len() != n * dim {
        return Err(Error::ShapeMismatch {
            field: "sample features".into(),
            expected: n * dim,
            found: features.len(),
        });
    }
    let groups: Vec<&Vec<usize>> = batch.by_segment.values().collect();
    let k = groups.len();
    let row = |s: usize| &features[s * dim..(s + 1) * dim];

    let mut centroids = vec![0f64; k * dim];
    let mut owner = vec![usize::MAX; n];
    for (j, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::invalid("empty segment group in batch"));
        }
        let c = &mut centroids[j * dim..(j + 1) * dim];
        for &s in members.iter() {
            owner[s] = j;
            for (ci, &v) in c.iter_mut().zip(row(s)) {
                *ci += v as f64;
            }
        }
        let inv = 1.0 / members.len() as f64;
        c.iter_mut().for_each(|ci| *ci *= inv);
    }

    let scale = 1.0 / n as f64;
    let mut loss = 0f64;
    let mut grad = vec![0f64; n * dim];
    let mut centroid_grad = vec![0f64; k * dim];
    let mut logits = vec![0f64; k];
    for s in 0..n {
        let x = row(s);
        for (l, logit) in logits.iter_mut().enumerate() {
            let c = &centroids[l * dim..(l + 1) * dim];
            *logit = x.iter().zip(c).map(|(&a, &b)| a as f64 * b).sum();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        let j = owner[s];
        loss -= logits[j] - lse;
        // d loss / d logit_l = (p_l − [l == j]) / n
        let g_row = &mut grad[s * dim..(s + 1) * dim];
        for l in 0..k {
            let p = (logits[l] - lse).exp();
            let g = scale * (p - if l == j { 1.0 } else { 0.0 });
            let c = &centroids[l * dim..(l + 1) * dim];
            let cg = &mut centroid_grad[l * dim..(l + 1) * dim];
            for d in 0..dim {
                g_row[d] += g * c[d];
                cg[d] += g * x[d] as f64;
            }
        }
    }
    for (j, members) in groups.iter().enumerate() {
        let inv = 1.0 / members.len() as f64;
        let cg = &centroid_grad[j * dim..(j + 1) * dim];
        for &s in members.iter() {
            for (g, &c) in grad[s * dim..(s + 1) * dim].iter_mut().zip(cg) {
                *g += c * inv;
            }
        }
    }
    Ok(InfoNce {
        loss: loss * scale,
        grad: grad.into_iter().map(|g| g as f32).collect(),
    })
}

/// Contrastive loss on a full rendered `H × W × dim` grid. The returned
/// gradient has the grid's shape and is zero at unsampled pixels.
pub fn infonce_loss(rendered: &[f32], dim: usize, batch: &PixelSampleBatch) -> Result<InfoNce> {
    let mut rows = Vec::with_capacity(batch.samples.len() * dim);
    for s in &batch.samples {
        let p = s.pixel as usize;
        let slice = rendered
            .get(p * dim..(p + 1) * dim)
            .ok_or_else(|| Error::invalid(format!("sample pixel {p} outside rendered grid")))?;
        rows.extend_from_slice(slice);
    }
    let sparse = infonce_loss_rows(&rows, dim, batch)?;
    let mut grad = vec![0f32; rendered.len()];
    for (k, s) in batch.samples.iter().enumerate() {
        let p = s.pixel as usize;
        for (g, &v) in grad[p * dim..(p + 1) * dim].iter_mut().zip(&sparse.grad[k * dim..(k + 1) * dim]) {
            *g += v;
        }
    }
    Ok(InfoNce {
        loss: sparse.loss,
        grad,
    })
}

/// Result of [`train_instance_field`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub scene: GaussianScene,
    /// One entry per optimization step.
    pub losses: Vec<f64>,
}

/// Redraws every instance feature i.i.d. normal with std
/// [`INSTANCE_INIT_STD`](crate::scene::INSTANCE_INIT_STD) from `seed`.
pub fn initialize_instance_features(scene: &mut GaussianScene, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in scene.instance.iter_mut() {
        *v = (crate::scene::INSTANCE_INIT_STD * rng.sample::<f64, _>(rand_distr::StandardNormal)) as f32;
    }
}

/// Optimizes the instance features of `scene` against its view masks.
/// Geometry, opacity and color are left untouched.
pub fn train_instance_field(scene: &GaussianScene, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut out = scene.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome { scene: out, losses });
    }
    if scene.views.is_empty() {
        return Err(Error::NoSupervision("scene has no views".into()));
    }
    if scene.views.iter().all(|v| v.segment_ids().is_empty()) {
        return Err(Error::NoSupervision("no view has a labeled segment".into()));
    }

    let raster_cfg = RasterConfig::default();
    let rasters: Vec<ViewRaster> = scene
        .views
        .iter()
        .map(|v| ViewRaster::new(scene, &v.camera, &raster_cfg))
        .collect();
    let dim = scene.d_i;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, out.instance.len());
    let mut order: Vec<usize> = (0..scene.views.len()).collect();
    let mut cursor = order.len();

    for step in 0..cfg.steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let v = order[cursor];
        cursor += 1;
        let batch = sample_pixels(&scene.views[v], v, cfg.samples_per_segment, &mut rng);
        if batch.samples.len() < 2 {
            continue;
        }
        let pixels = batch.pixels();
        let (features, _) = rasters[v].forward_pixels(&pixels, &out.instance, dim)?;
        let nce = infonce_loss_rows(&features, dim, &batch)?;
        if !nce.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grad = rasters[v].backward_pixels(&pixels, &nce.grad, dim)?;
        optimizer.step(&mut out.instance, &grad);
        losses.push(nce.loss);
        if step % 500 == 0 {
            debug!("instance field step {step}: loss {:.5}", nce.loss);
        }
    }
    out.stage.trained = true;
    out.stage.mapped = None;
    out.language = None;
    Ok(TrainOutcome { scene: out, losses })
}

/// Trailing moving average; entry `k` averages `trace[k+1-window ..= k]`
/// once a full window is available.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || trace.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(trace.len() - window + 1);
    let mut sum: f64 = trace[..window].iter().sum();
    out.push(sum / window as f64);
    for k in window..trace.len() {
        sum += trace[k] - trace[k - window];
        out.push(sum / window as f64);
    }
    out
}

/// Mean pairwise cosine of instance features within and across objects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub intra: f64,
    pub inter: f64,
}

/// Cosine statistics over all Gaussian pairs with nonzero ground-truth IDs.
pub fn feature_separation(scene: &GaussianScene) -> Option<Separation> {
    let ids = scene.object_ids.as_ref()?;
    let unit = linalg::normalize_rows(&scene.instance, scene.d_i);
    let d = scene.d_i;
    let labeled: Vec<usize> = (0..scene.len()).filter(|&i| ids[i] != 0).collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0f64, 0u64, 0f64, 0u64);
    for (a, &i) in labeled.iter().enumerate() {
        for &j in &labeled[a + 1..] {
            let c = linalg::dot_f64(&unit[i * d..(i + 1) * d], &unit[j * d..(j + 1) * d]);
            if ids[i] == ids[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    Some(Separation {
        intra: if n_intra > 0 { intra / n_intra as f64 } else { 1.0 },
        inter: if n_inter > 0 { inter / n_inter as f64 } else { 0.0 },
    })
}
