//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use splatseg::{Camera, Gaussian, GaussianScene, RasterConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn random_quaternion(rng: &mut impl Rng) -> [f32; 4] {
    let v = unit_vector(rng, 4);
    [v[0], v[1], v[2], v[3]]
}

/// Random Gaussians around the origin, a camera looking at it from a random
/// direction, and a couple of Gaussians behind the camera.
pub fn random_scene(seed: u64, n: usize, channels: usize, size: u32) -> (GaussianScene, Camera) {
    let mut r = rng(seed);
    let dir = unit_vector(&mut r, 3);
    let dist = r.random_range(3.0f32..5.0);
    let eye = [dir[0] * dist, dir[1] * dist, dir[2] * dist];
    let up = if dir[1].abs() > 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let camera = Camera::look_at(eye, [0.0; 3], up, size, size, r.random_range(28.0f32..40.0));
    let mut scene = GaussianScene::new(channels, 1);
    for k in 0..n {
        let position = if k < 2 {
            // behind the eye
            [eye[0] * 1.3, eye[1] * 1.3, eye[2] * 1.3]
        } else {
            [
                r.random_range(-1.2f32..1.2),
                r.random_range(-1.2f32..1.2),
                r.random_range(-1.2f32..1.2),
            ]
        };
        let scale = [0, 1, 2].map(|_| 10f32.powf(r.random_range(-1.7f32..-0.4)));
        scene
            .push(Gaussian {
                position,
                scale,
                rotation: random_quaternion(&mut r),
                opacity: r.random_range(0.05f32..1.0),
                color: [r.random(), r.random(), r.random()],
                instance_feature: (0..channels).map(|_| r.random_range(-1.0f32..1.0)).collect(),
                language_feature: None,
                gt_object_id: None,
            })
            .unwrap();
    }
    (scene, camera)
}

fn quat_matrix(q: [f32; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v as f64 / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Footprint of one Gaussian in pixel space: mean, conic, depth.
pub struct NaiveSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub conic: [f64; 3],
}

/// Projects Gaussian `i` with an explicit perspective Jacobian; `None`
/// behind the near plane.
pub fn naive_project(scene: &GaussianScene, camera: &Camera, i: usize, cfg: &RasterConfig) -> Option<NaiveSplat> {
    let rot = camera.rotation.map(|row| row.map(|v| v as f64));
    let p = scene.positions[i].map(|v| v as f64);
    let pc: Vec<f64> = (0..3)
        .map(|r| rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + camera.translation[r] as f64)
        .collect();
    let (x, y, z) = (pc[0], pc[1], pc[2]);
    if z <= cfg.near_plane as f64 {
        return None;
    }
    let r = quat_matrix(scene.rotations[i]);
    let s = scene.scales[i].map(|v| v as f64);
    let mut rs = r;
    for row in rs.iter_mut() {
        for c in 0..3 {
            row[c] *= s[c];
        }
    }
    let mut rs_t = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            rs_t[a][b] = rs[b][a];
        }
    }
    let cov3 = matmul3(&rs, &rs_t);
    let (fx, fy) = (camera.fx as f64, camera.fy as f64);
    let j = [[fx / z, 0.0, -fx * x / (z * z)], [0.0, fy / z, -fy * y / (z * z)]];
    // rows of J·W
    let t: Vec<[f64; 3]> = j
        .iter()
        .map(|jr| [0, 1, 2].map(|c| (0..3).map(|k| jr[k] * rot[k][c]).sum()))
        .collect();
    let quad = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        (0..3).map(|u| (0..3).map(|v| a[u] * cov3[u][v] * b[v]).sum::<f64>()).sum()
    };
    let reg = cfg.cov_regularizer as f64;
    let (a, b, c) = (quad(&t[0], &t[0]) + reg, quad(&t[0], &t[1]), quad(&t[1], &t[1]) + reg);
    let det = a * c - b * b;
    Some(NaiveSplat {
        index: i,
        depth: z,
        mean: [fx * x / z + camera.cx as f64, fy * y / z + camera.cy as f64],
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
    })
}

/// Per-pixel front-to-back blend over every Gaussian, no tiles and no
/// culling beyond the near plane. Returns `(values, alpha)`.
pub fn naive_render(
    scene: &GaussianScene,
    camera: &Camera,
    values: &[f32],
    channels: usize,
    cfg: &RasterConfig,
) -> (Vec<f64>, Vec<f64>) {
    let mut splats: Vec<NaiveSplat> = (0..scene.len())
        .filter_map(|i| naive_project(scene, camera, i, cfg))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let (w, h) = (camera.width as usize, camera.height as usize);
    let cutoff = (cfg.footprint_sigma as f64).powi(2);
    let mut out = vec![0f64; w * h * channels];
    let mut alpha_out = vec![0f64; w * h];
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let (ux, uy) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1f64;
            for s in &splats {
                let dx = ux - s.mean[0];
                let dy = uy - s.mean[1];
                let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if m > cutoff {
                    continue;
                }
                let a = (scene.opacities[s.index] as f64 * (-0.5 * m).exp()).min(cfg.alpha_max as f64);
                let wgt = a * t;
                for c in 0..channels {
                    out[p * channels + c] += wgt * values[s.index * channels + c] as f64;
                }
                alpha_out[p] += wgt;
                t *= 1.0 - a;
                if t < cfg.transmittance_min as f64 {
                    break;
                }
            }
        }
    }
    (out, alpha_out)
}

/// Every pair `(i, j)`, `i < j`, with `|x_i · x_j − t| < margin` in f64,
/// over unit-normalized rows.
pub fn near_threshold_pairs(rows: &[f32], dim: usize, t: f64, margin: f64) -> usize {
    let unit: Vec<Vec<f64>> = rows
        .chunks(dim)
        .map(|r| {
            let n = r.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            r.iter().map(|&v| v as f64 / n).collect()
        })
        .collect();
    let mut count = 0;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if (c - t).abs() < margin {
                count += 1;
            }
        }
    }
    count
}
