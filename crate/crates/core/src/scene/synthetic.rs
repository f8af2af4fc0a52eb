//! Synthetic scenes with ground truth: clustered Gaussian blobs, a
//! near-orthogonal embedding vocabulary and rendered dominant-object masks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{unit_quaternion, Camera, Gaussian, GaussianScene, ViewSupervision};
use crate::error::{Error, Result};
use crate::rasterizer::{RasterConfig, ViewRaster};

/// Pixels whose accumulated alpha is below this are unlabeled (ID 0).
pub const MASK_ALPHA_MIN: f32 = 0.05;

/// Standard deviation of freshly initialized instance features.
pub const INSTANCE_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub num_objects: usize,
    pub gaussians_per_object: usize,
    pub d_i: usize,
    pub d_l: usize,
    pub num_views: usize,
    pub seed: u64,
    pub image_size: u32,
    /// Extra Gaussians with object ID 0 scattered between the objects.
    pub background_gaussians: usize,
    /// Radius of each object blob, world units.
    pub cluster_radius: f32,
    /// Expected norm of the isotropic perturbation added to each view's
    /// segment embedding before re-normalization. Stands in for
    /// view-dependent encoder noise; 0 gives exact vocabulary vectors.
    pub language_noise: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_objects: 8,
            gaussians_per_object: 100,
            d_i: 16,
            d_l: 32,
            num_views: 6,
            seed: 0,
            image_size: 64,
            background_gaussians: 0,
            cluster_radius: 0.25,
            language_noise: 0.0,
        }
    }
}

/// Builds a deterministic synthetic scene from `spec`.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<GaussianScene> {
    if spec.num_objects == 0 {
        return Err(Error::invalid("num_objects must be >= 1"));
    }
    if spec.d_l < 4 {
        return Err(Error::invalid("d_l must be >= 4"));
    }
    if spec.d_l < spec.num_objects {
        return Err(Error::invalid(format!(
            "d_l = {} cannot hold {} near-orthogonal vocabulary vectors",
            spec.d_l, spec.num_objects
        )));
    }
    if spec.d_i == 0 || spec.gaussians_per_object == 0 || spec.num_views == 0 || spec.image_size == 0 {
        return Err(Error::invalid("d_i, gaussians_per_object, num_views and image_size must be >= 1"));
    }
    if !(spec.cluster_radius > 0.0) {
        return Err(Error::invalid("cluster_radius must be positive"));
    }
    if !(spec.language_noise >= 0.0) || !spec.language_noise.is_finite() {
        return Err(Error::invalid("language_noise must be finite and >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.cluster_radius as f64;
    let centers = place_centers(spec.num_objects, r, &mut rng);
    let vocabulary = orthonormal_vocabulary(spec.num_objects, spec.d_l, &mut rng);

    let mut scene = GaussianScene::new(spec.d_i, spec.d_l);
    for (k, center) in centers.iter().enumerate() {
        let base: [f64; 3] = [0.2 + 0.6 * rng.random::<f64>(), 0.2 + 0.6 * rng.random::<f64>(), 0.2 + 0.6 * rng.random::<f64>()];
        for _ in 0..spec.gaussians_per_object {
            let offset = sample_ball(&mut rng, r);
            let color = base.map(|c| (c + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0) as f32);
            let g = random_gaussian(
                &mut rng,
                [center[0] + offset[0], center[1] + offset[1], center[2] + offset[2]],
                r,
                color,
                (k + 1) as u32,
                spec.d_i,
            );
            scene.push(g)?;
        }
    }

    let centroid = mean3(&centers);
    let extent = centers
        .iter()
        .map(|c| dist3(c, &centroid))
        .fold(0.0, f64::max)
        + r;
    for _ in 0..spec.background_gaussians {
        // Background floats between objects, never inside a blob.
        let p = loop {
            let p = [
                centroid[0] + extent * (2.0 * rng.random::<f64>() - 1.0),
                centroid[1] + extent * (2.0 * rng.random::<f64>() - 1.0),
                centroid[2] + extent * (2.0 * rng.random::<f64>() - 1.0),
            ];
            if centers.iter().all(|c| dist3(c, &p) > 1.5 * r) {
                break p;
            }
        };
        let mut g = random_gaussian(&mut rng, p, r, [0.5, 0.5, 0.5], 0, spec.d_i);
        g.opacity *= 0.5;
        scene.push(g)?;
    }

    scene.vocabulary = Some(
        vocabulary
            .into_iter()
            .enumerate()
            .map(|(k, v)| ((k + 1) as u32, v))
            .collect(),
    );

    let cameras = fibonacci_cameras(spec.num_views, centroid, 3.0 * extent, spec.image_size, extent);
    let cfg = RasterConfig::default();
    let ids = scene.object_ids.clone().unwrap_or_default();
    // Separate stream so the noise level does not shift any other draw.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6c61_6e67_6e6f_6973);
    let noise_scale = spec.language_noise as f64 / (spec.d_l as f64).sqrt();
    for camera in cameras {
        let raster = ViewRaster::new(&scene, &camera, &cfg);
        let instance_mask = dominant_object_mask(&raster, &ids);
        let vocab = scene.vocabulary.as_ref().expect("set above");
        let segment_language: BTreeMap<u32, Vec<f32>> = instance_mask
            .iter()
            .filter(|&&id| id != 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|&id| {
                if noise_scale == 0.0 {
                    return (id, vocab[&id].clone());
                }
                let v: Vec<f64> = vocab[&id]
                    .iter()
                    .map(|&x| x as f64 + noise_scale * noise_rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (id, v.iter().map(|x| (x / n) as f32).collect())
            })
            .collect();
        scene.views.push(ViewSupervision {
            camera,
            instance_mask,
            segment_language,
            language_free: BTreeSet::new(),
        });
    }
    scene.validate()?;
    Ok(scene)
}

/// Per-pixel object ID of the dominant contributor, 0 where alpha is below
/// [`MASK_ALPHA_MIN`] or nothing contributes.
pub fn dominant_object_mask(raster: &ViewRaster, object_ids: &[u32]) -> Vec<u32> {
    raster
        .dominant()
        .into_iter()
        .map(|(g, alpha)| match g {
            Some(g) if alpha >= MASK_ALPHA_MIN => object_ids[g as usize],
            _ => 0,
        })
        .collect()
}

fn random_gaussian(
    rng: &mut ChaCha8Rng,
    position: [f64; 3],
    cluster_radius: f64,
    color: [f32; 3],
    object_id: u32,
    d_i: usize,
) -> Gaussian {
    let scale = std::array::from_fn(|_| (cluster_radius * (0.12 + 0.12 * rng.random::<f64>())) as f32);
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let opacity = (0.5 + 0.4 * rng.random::<f64>()) as f32;
    let instance_feature = (0..d_i)
        .map(|_| (INSTANCE_INIT_STD * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    Gaussian {
        position: position.map(|v| v as f32),
        scale,
        rotation: unit_quaternion(q),
        opacity,
        color,
        instance_feature,
        language_feature: None,
        gt_object_id: Some(object_id),
    }
}

/// Rejection-samples blob centers at least `4 · radius` apart.
fn place_centers(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let min_sep = 4.0 * radius;
    let mut half = 0.6 * min_sep * (n as f64).cbrt();
    loop {
        let mut centers: Vec<[f64; 3]> = Vec::with_capacity(n);
        let mut attempts = 0;
        while centers.len() < n && attempts < 20_000 {
            attempts += 1;
            let c = std::array::from_fn(|_| half * (2.0 * rng.random::<f64>() - 1.0));
            if centers.iter().all(|o| dist3(o, &c) >= min_sep) {
                centers.push(c);
            }
        }
        if centers.len() == n {
            return centers;
        }
        half *= 1.25;
    }
}

/// `n` unit vectors in `R^dim` from Gram-Schmidt over Gaussian draws.
fn orthonormal_vocabulary(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
        .into_iter()
        .map(|v| {
            let mut f: Vec<f32> = v.into_iter().map(|x| x as f32).collect();
            crate::linalg::normalize_in_place(&mut f);
            f
        })
        .collect()
}

/// Cameras on a Fibonacci sphere around `target`, all looking at it.
fn fibonacci_cameras(n: usize, target: [f64; 3], distance: f64, size: u32, extent: f64) -> Vec<Camera> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    // Field of view wide enough for a sphere of radius `extent`, with margin.
    let half_tan = 1.1 * (extent / distance) / (1.0 - (extent / distance).powi(2)).sqrt();
    let focal = (size as f64 / 2.0 / half_tan) as f32;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let dir = [rho * phi.cos(), rho * phi.sin(), z];
            let eye = std::array::from_fn(|k| (target[k] + distance * dir[k]) as f32);
            let up = if z.abs() > 0.95 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
            Camera::look_at(eye, target.map(|v| v as f32), up, size, size, focal)
        })
        .collect()
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    let d: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
    let r = radius * rng.random::<f64>().cbrt();
    d.map(|v| v / n * r)
}

fn mean3(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    std::array::from_fn(|k| points.iter().map(|p| p[k]).sum::<f64>() / n)
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
