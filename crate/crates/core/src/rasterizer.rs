//! Tile-based software rasterizer for 3D Gaussians.
//!
//! Gaussians are projected once per view into [`Splat2D`]s, globally sorted
//! by camera depth (ties by Gaussian index) and binned into square tiles.
//! A pixel blends the splats of its tile front to back:
//!
//! ```text
//! value(u) = Σ_i v_i · w_i,   w_i = α_i · Π_{t<i} (1 − α_t),   α_i = o_i · exp(−½ dᵀ Σ⁻¹ d)
//! ```
//!
//! With geometry frozen this is linear in the per-Gaussian values `v_i`, so
//! the backward pass is the exact transpose `grad_i = Σ_u w_{i,u} · upstream(u)`.
//!
//! A splat only touches pixels inside its footprint ellipse
//! (`dᵀ Σ⁻¹ d ≤ footprint_sigma²`). Because the footprint is a per-pixel
//! predicate, tiling changes only which splats are visited, never the result.

use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{write_f32_file, Camera, GaussianScene};

/// Numerical conventions of the blend. The defaults are the usual 3D-GS values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub alpha_max: f32,
    pub transmittance_min: f32,
    /// Footprint extent in standard deviations.
    pub footprint_sigma: f32,
    /// Added to the projected covariance diagonal, pixels².
    pub cov_regularizer: f32,
    pub near_plane: f32,
    pub tile_size: u32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            footprint_sigma: 3.0,
            cov_regularizer: 0.3,
            near_plane: 0.01,
            tile_size: 16,
        }
    }
}

/// A Gaussian projected onto the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f32; 2],
    /// Symmetric covariance `(xx, xy, yy)`, pixels².
    pub cov2d: [f32; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f32; 3],
    pub depth: f32,
    pub gaussian_index: u32,
    pub radius: f32,
    pub opacity: f32,
}

/// Output of [`project`]: surviving splats in Gaussian order plus drop counters.
#[derive(Clone, Debug, Default)]
pub struct Projection {
    pub splats: Vec<Splat2D>,
    pub culled_near: usize,
    pub culled_outside: usize,
    pub degenerate: usize,
}

/// Projects every Gaussian (or those passing `keep`) through `camera`.
pub fn project_filtered(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &RasterConfig,
    keep: impl Fn(usize) -> bool,
) -> Projection {
    let w_rot = camera.rotation_matrix();
    let mut out = Projection::default();
    for i in 0..scene.len() {
        if !keep(i) {
            continue;
        }
        let pc = camera.to_camera_space(scene.positions[i]);
        if pc.z <= cfg.near_plane as f64 {
            out.culled_near += 1;
            continue;
        }
        let cov3d = world_covariance(scene.scales[i], scene.rotations[i]);
        let (fx, fy) = (camera.fx as f64, camera.fy as f64);
        let (x, y, z) = (pc.x, pc.y, pc.z);
        let jac = Matrix2x3::new(
            fx / z, 0.0, -fx * x / (z * z),
            0.0, fy / z, -fy * y / (z * z),
        );
        let t = jac * w_rot;
        let cov = t * cov3d * t.transpose();
        let reg = cfg.cov_regularizer as f64;
        let (a, b, c) = (cov[(0, 0)] + reg, cov[(0, 1)], cov[(1, 1)] + reg);
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            out.degenerate += 1;
            continue;
        }
        let half_diff = 0.5 * (a - c);
        let lambda_max = 0.5 * (a + c) + (half_diff * half_diff + b * b).sqrt();
        let radius = cfg.footprint_sigma as f64 * lambda_max.sqrt();
        let mx = fx * x / z + camera.cx as f64;
        let my = fy * y / z + camera.cy as f64;
        if mx + radius < 0.0
            || my + radius < 0.0
            || mx - radius > camera.width as f64
            || my - radius > camera.height as f64
        {
            out.culled_outside += 1;
            continue;
        }
        out.splats.push(Splat2D {
            mean2d: [mx as f32, my as f32],
            cov2d: [a as f32, b as f32, c as f32],
            conic: [(c / det) as f32, (-b / det) as f32, (a / det) as f32],
            depth: z as f32,
            gaussian_index: i as u32,
            radius: radius as f32,
            opacity: scene.opacities[i],
        });
    }
    out
}

pub fn project(scene: &GaussianScene, camera: &Camera, cfg: &RasterConfig) -> Projection {
    project_filtered(scene, camera, cfg, |_| true)
}

/// `R S Sᵀ Rᵀ` for a `(w, x, y, z)` quaternion and per-axis std.
pub fn world_covariance(scale: [f32; 3], rotation: [f32; 4]) -> Matrix3<f64> {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        rotation[0] as f64,
        rotation[1] as f64,
        rotation[2] as f64,
        rotation[3] as f64,
    ));
    let r = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::new(scale[0] as f64, scale[1] as f64, scale[2] as f64));
    let m = r * s;
    m * m.transpose()
}

/// Which per-Gaussian vector to render.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSelector {
    Color,
    Instance,
    Language,
    /// One-hot of the ground-truth object ID (`max_id + 1` channels).
    ObjectIdOneHot,
}

/// Flattens the selected per-Gaussian vectors into an `N × C` matrix.
pub fn channel_values(scene: &GaussianScene, selector: ChannelSelector) -> Result<(Vec<f32>, usize)> {
    match selector {
        ChannelSelector::Color => Ok((scene.colors.iter().flatten().copied().collect(), 3)),
        ChannelSelector::Instance => Ok((scene.instance.clone(), scene.d_i)),
        ChannelSelector::Language => scene
            .language
            .clone()
            .map(|l| (l, scene.d_l))
            .ok_or_else(|| Error::invalid("scene has no language field")),
        ChannelSelector::ObjectIdOneHot => {
            let ids = scene
                .object_ids
                .as_ref()
                .ok_or_else(|| Error::invalid("scene has no object ids"))?;
            let c = ids.iter().copied().max().unwrap_or(0) as usize + 1;
            let mut v = vec![0f32; ids.len() * c];
            for (i, &id) in ids.iter().enumerate() {
                v[i * c + id as usize] = 1.0;
            }
            Ok((v, c))
        }
    }
}

/// Rendered channels for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// `H × W × C` row-major.
    pub data: Vec<f32>,
    /// Accumulated opacity `Σ w_i` per pixel.
    pub alpha: Vec<f32>,
    /// Per-pixel `(gaussian_index, w_i)` in blending order, when requested.
    pub contributors: Option<Vec<Vec<(u32, f32)>>>,
}

impl RenderOutput {
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let p = (y * self.width + x) as usize;
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    /// Writes `channels.f32`, `alpha.f32` and a small `render.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f32_file(&dir.join("channels.f32"), &self.data)?;
        write_f32_file(&dir.join("alpha.f32"), &self.alpha)?;
        let manifest = serde_json::json!({
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "tensors": {
                "channels.f32": [self.height, self.width, self.channels],
                "alpha.f32": [self.height, self.width],
            }
        });
        let path = dir.join("render.json");
        let text = serde_json::to_string_pretty(&manifest).expect("static json");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

/// Projected, depth-sorted and tile-binned geometry of one view.
///
/// Geometry is frozen once built, so a trainer can keep one per view and
/// render any channel vector through it repeatedly.
#[derive(Clone, Debug)]
pub struct ViewRaster {
    width: u32,
    height: u32,
    cfg: RasterConfig,
    n_gaussians: usize,
    splats: Vec<Splat2D>,
    tiles_x: u32,
    /// Per tile, positions into `splats` in blending order.
    tiles: Vec<Vec<u32>>,
    pub culled: usize,
}

impl ViewRaster {
    pub fn new(scene: &GaussianScene, camera: &Camera, cfg: &RasterConfig) -> Self {
        Self::with_filter(scene, camera, cfg, |_| true)
    }

    /// Builds the view from the Gaussians passing `keep` only.
    pub fn with_filter(
        scene: &GaussianScene,
        camera: &Camera,
        cfg: &RasterConfig,
        keep: impl Fn(usize) -> bool,
    ) -> Self {
        let proj = project_filtered(scene, camera, cfg, keep);
        let culled = proj.culled_near + proj.culled_outside + proj.degenerate;
        let mut splats = proj.splats;
        splats.sort_by(|a, b| {
            a.depth
                .total_cmp(&b.depth)
                .then(a.gaussian_index.cmp(&b.gaussian_index))
        });
        let ts = cfg.tile_size.max(1);
        let tiles_x = camera.width.div_ceil(ts);
        let tiles_y = camera.height.div_ceil(ts);
        let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        let tile_of = |v: f32, n: u32| -> u32 { ((v / ts as f32).floor().max(0.0) as u32).min(n - 1) };
        for (pos, s) in splats.iter().enumerate() {
            let (x0, x1) = (
                tile_of(s.mean2d[0] - s.radius, tiles_x),
                tile_of(s.mean2d[0] + s.radius, tiles_x),
            );
            let (y0, y1) = (
                tile_of(s.mean2d[1] - s.radius, tiles_y),
                tile_of(s.mean2d[1] + s.radius, tiles_y),
            );
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    tiles[(ty * tiles_x + tx) as usize].push(pos as u32);
                }
            }
        }
        ViewRaster {
            width: camera.width,
            height: camera.height,
            cfg: *cfg,
            n_gaussians: scene.len(),
            splats,
            tiles_x,
            tiles,
            culled,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Surviving splats in blending order.
    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    /// Walks pixel `p`'s contributors front to back, calling `f(splat_pos, w)`.
    /// Returns the accumulated alpha.
    #[inline]
    fn blend_pixel(&self, p: usize, mut f: impl FnMut(u32, f32)) -> f32 {
        let x = (p % self.width as usize) as u32;
        let y = (p / self.width as usize) as u32;
        let ts = self.cfg.tile_size.max(1);
        let tile = &self.tiles[((y / ts) * self.tiles_x + x / ts) as usize];
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let cutoff = self.cfg.footprint_sigma * self.cfg.footprint_sigma;
        let mut transmittance = 1f32;
        let mut acc = 0f32;
        for &pos in tile {
            let s = &self.splats[pos as usize];
            let dx = px - s.mean2d[0];
            let dy = py - s.mean2d[1];
            let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
            if m > cutoff {
                continue;
            }
            let alpha = (s.opacity * (-0.5 * m).exp()).min(self.cfg.alpha_max);
            let w = alpha * transmittance;
            f(pos, w);
            acc += w;
            transmittance *= 1.0 - alpha;
            if transmittance < self.cfg.transmittance_min {
                break;
            }
        }
        acc
    }

    fn check_values(&self, values: &[f32], channels: usize) -> Result<()> {
        if values.len() != self.n_gaussians * channels {
            return Err(Error::ShapeMismatch {
                field: "channel values".into(),
                expected: self.n_gaussians * channels,
                found: values.len(),
            });
        }
        Ok(())
    }

    /// Renders an `N × channels` value matrix.
    pub fn forward(&self, values: &[f32], channels: usize) -> Result<RenderOutput> {
        self.forward_impl(values, channels, false)
    }

    /// Like [`forward`](Self::forward) but also records per-pixel contributors.
    pub fn forward_with_contributors(&self, values: &[f32], channels: usize) -> Result<RenderOutput> {
        self.forward_impl(values, channels, true)
    }

    fn forward_impl(&self, values: &[f32], channels: usize, record: bool) -> Result<RenderOutput> {
        self.check_values(values, channels)?;
        let npix = self.pixel_count();
        let w = self.width as usize;
        let mut data = vec![0f32; npix * channels];
        let mut alpha = vec![0f32; npix];
        let mut contributors = if record { vec![Vec::new(); npix] } else { Vec::new() };
        let rows = data
            .par_chunks_mut(w * channels.max(1))
            .zip(alpha.par_chunks_mut(w));
        let render_row = |y: usize, row: &mut [f32], arow: &mut [f32], mut crow: Option<&mut [Vec<(u32, f32)>]>| {
            for x in 0..w {
                let p = y * w + x;
                let out = &mut row[x * channels..(x + 1) * channels];
                arow[x] = self.blend_pixel(p, |pos, wt| {
                    let gi = self.splats[pos as usize].gaussian_index as usize;
                    let v = &values[gi * channels..(gi + 1) * channels];
                    for (o, &vi) in out.iter_mut().zip(v) {
                        *o += vi * wt;
                    }
                    if let Some(c) = crow.as_deref_mut() {
                        c[x].push((gi as u32, wt));
                    }
                });
            }
        };
        if record {
            rows.zip(contributors.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, ((row, arow), crow))| render_row(y, row, arow, Some(crow)));
        } else {
            rows.enumerate()
                .for_each(|(y, (row, arow))| render_row(y, row, arow, None));
        }
        Ok(RenderOutput {
            width: self.width,
            height: self.height,
            channels,
            data,
            alpha,
            contributors: record.then_some(contributors),
        })
    }

    /// Accumulated alpha only.
    pub fn alpha(&self) -> Vec<f32> {
        (0..self.pixel_count())
            .into_par_iter()
            .map(|p| self.blend_pixel(p, |_, _| {}))
            .collect()
    }

    /// Index of the Gaussian with the largest blending weight at each pixel
    /// (first in blending order on ties), plus the pixel's alpha.
    pub fn dominant(&self) -> Vec<(Option<u32>, f32)> {
        (0..self.pixel_count())
            .into_par_iter()
            .map(|p| {
                let mut best: Option<(u32, f32)> = None;
                let a = self.blend_pixel(p, |pos, w| {
                    if best.is_none_or(|(_, bw)| w > bw) {
                        best = Some((self.splats[pos as usize].gaussian_index, w));
                    }
                });
                (best.map(|(g, _)| g), a)
            })
            .collect()
    }

    /// Transpose of [`forward`](Self::forward): `grad_i = Σ_u w_{i,u} · upstream(u)`.
    ///
    /// Per-tile partial sums are merged in tile order, so the result does not
    /// depend on the thread count.
    pub fn backward(&self, upstream: &[f32], channels: usize) -> Result<Vec<f32>> {
        let npix = self.pixel_count();
        if upstream.len() != npix * channels {
            return Err(Error::ShapeMismatch {
                field: "upstream".into(),
                expected: npix * channels,
                found: upstream.len(),
            });
        }
        let ts = self.cfg.tile_size.max(1);
        let partials: Vec<Vec<f32>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let list = &self.tiles[t];
                if list.is_empty() {
                    return Vec::new();
                }
                // Splat positions in a tile list are strictly increasing.
                let mut partial = vec![0f32; list.len() * channels];
                let tx = t as u32 % self.tiles_x;
                let ty = t as u32 / self.tiles_x;
                for y in ty * ts..((ty + 1) * ts).min(self.height) {
                    for x in tx * ts..((tx + 1) * ts).min(self.width) {
                        let p = (y * self.width + x) as usize;
                        let up = &upstream[p * channels..(p + 1) * channels];
                        if up.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        self.blend_pixel(p, |pos, w| {
                            let k = list.binary_search(&pos).expect("splat is binned in its tile");
                            for (g, &u) in partial[k * channels..(k + 1) * channels].iter_mut().zip(up) {
                                *g += w * u;
                            }
                        });
                    }
                }
                partial
            })
            .collect();
        let mut grad = vec![0f32; self.n_gaussians * channels];
        for (list, partial) in self.tiles.iter().zip(&partials) {
            if partial.is_empty() {
                continue;
            }
            for (k, &pos) in list.iter().enumerate() {
                let gi = self.splats[pos as usize].gaussian_index as usize;
                for (g, &p) in grad[gi * channels..(gi + 1) * channels]
                    .iter_mut()
                    .zip(&partial[k * channels..(k + 1) * channels])
                {
                    *g += p;
                }
            }
        }
        Ok(grad)
    }

    /// Renders only the listed pixels (row-major indices); returns a
    /// `P × channels` matrix and the per-pixel alpha.
    pub fn forward_pixels(&self, pixels: &[u32], values: &[f32], channels: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_values(values, channels)?;
        self.check_pixels(pixels)?;
        let mut out = vec![0f32; pixels.len() * channels];
        let mut alpha = vec![0f32; pixels.len()];
        for (k, &p) in pixels.iter().enumerate() {
            let row = &mut out[k * channels..(k + 1) * channels];
            alpha[k] = self.blend_pixel(p as usize, |pos, w| {
                let gi = self.splats[pos as usize].gaussian_index as usize;
                for (o, &v) in row.iter_mut().zip(&values[gi * channels..(gi + 1) * channels]) {
                    *o += v * w;
                }
            });
        }
        Ok((out, alpha))
    }

    /// Transpose of [`forward_pixels`](Self::forward_pixels), accumulated in pixel order.
    pub fn backward_pixels(&self, pixels: &[u32], upstream: &[f32], channels: usize) -> Result<Vec<f32>> {
        self.check_pixels(pixels)?;
        if upstream.len() != pixels.len() * channels {
            return Err(Error::ShapeMismatch {
                field: "upstream".into(),
                expected: pixels.len() * channels,
                found: upstream.len(),
            });
        }
        let mut grad = vec![0f32; self.n_gaussians * channels];
        for (k, &p) in pixels.iter().enumerate() {
            let up = &upstream[k * channels..(k + 1) * channels];
            self.blend_pixel(p as usize, |pos, w| {
                let gi = self.splats[pos as usize].gaussian_index as usize;
                for (g, &u) in grad[gi * channels..(gi + 1) * channels].iter_mut().zip(up) {
                    *g += w * u;
                }
            });
        }
        Ok(grad)
    }

    fn check_pixels(&self, pixels: &[u32]) -> Result<()> {
        let n = self.pixel_count();
        match pixels.iter().find(|&&p| p as usize >= n) {
            Some(&p) => Err(Error::invalid(format!("pixel index {p} outside image of {n} pixels"))),
            None => Ok(()),
        }
    }
}

/// Renders the selected channels of `scene` through `camera`.
pub fn render(
    scene: &GaussianScene,
    camera: &Camera,
    selector: ChannelSelector,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    let (values, c) = channel_values(scene, selector)?;
    ViewRaster::new(scene, camera, cfg).forward(&values, c)
}

/// Per-Gaussian gradients (`N × C`) of `Σ_u upstream(u) · render(u)`.
pub fn render_backward(
    scene: &GaussianScene,
    camera: &Camera,
    selector: ChannelSelector,
    upstream: &[f32],
    cfg: &RasterConfig,
) -> Result<Vec<f32>> {
    let (_, c) = channel_values(scene, selector)?;
    ViewRaster::new(scene, camera, cfg).backward(upstream, c)
}
