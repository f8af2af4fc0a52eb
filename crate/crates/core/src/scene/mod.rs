//! Gaussian scenes, cameras and per-view 2D supervision.
//!
//! A [`GaussianScene`] stores its Gaussians column-wise (one `Vec` per
//! attribute) so the rasterizer and the trainers can borrow a whole feature
//! matrix at once. [`Gaussian`] is the row view used to build and inspect
//! individual entries.

pub(crate) mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use io::{load_scene, save_scene, read_f32_file, write_f32_file, MANIFEST_FILE};
pub use synthetic::{dominant_object_mask, generate_synthetic_scene, SceneSpec, INSTANCE_INIT_STD, MASK_ALPHA_MIN};

/// Default instance feature width.
pub const DEFAULT_INSTANCE_DIM: usize = 16;

/// One Gaussian, as a row of a [`GaussianScene`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    /// Per-axis standard deviation, world units.
    pub scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
    pub instance_feature: Vec<f32>,
    pub language_feature: Option<Vec<f32>>,
    /// Ground-truth object, synthetic scenes only. 0 is background.
    pub gt_object_id: Option<u32>,
}

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space follows the usual computer-vision convention: +z looks into
/// the scene, +x is right and +y is down in the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f32; 3]; 3],
    pub translation: [f32; 3],
}

impl Camera {
    /// Camera at `eye` looking at `target`. `up` only has to be non-parallel
    /// to the viewing direction.
    pub fn look_at(
        eye: [f32; 3],
        target: [f32; 3],
        up: [f32; 3],
        width: u32,
        height: u32,
        focal: f32,
    ) -> Self {
        let eye_v = Vector3::new(eye[0] as f64, eye[1] as f64, eye[2] as f64);
        let target_v = Vector3::new(target[0] as f64, target[1] as f64, target[2] as f64);
        let up_v = Vector3::new(up[0] as f64, up[1] as f64, up[2] as f64);
        let forward = (target_v - eye_v).normalize();
        let right = forward.cross(&up_v).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye_v);
        let mut rotation = [[0f32; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = rot[(r, c)] as f32;
            }
        }
        Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f32 / 2.0,
            cy: height as f32 / 2.0,
            rotation,
            translation: [t.x as f32, t.y as f32, t.z as f32],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0] as f64, r[0][1] as f64, r[0][2] as f64,
            r[1][0] as f64, r[1][1] as f64, r[1][2] as f64,
            r[2][0] as f64, r[2][1] as f64, r[2][2] as f64,
        )
    }

    pub fn to_camera_space(&self, p: [f32; 3]) -> Vector3<f64> {
        let t = &self.translation;
        self.rotation_matrix() * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
            + Vector3::new(t[0] as f64, t[1] as f64, t[2] as f64)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera width and height must be >= 1"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        let all = self
            .rotation
            .iter()
            .flatten()
            .chain(&self.translation)
            .chain([&self.cx, &self.cy]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        Ok(())
    }
}

/// 2D supervision for one posed view: a segment-ID mask plus one language
/// embedding per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSupervision {
    pub camera: Camera,
    /// Row-major `height × width` segment IDs; 0 is unlabeled.
    pub instance_mask: Vec<u32>,
    pub segment_language: BTreeMap<u32, Vec<f32>>,
    /// Segments that intentionally carry no language embedding.
    pub language_free: BTreeSet<u32>,
}

impl ViewSupervision {
    /// Nonzero segment IDs present in the mask, ascending.
    pub fn segment_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.instance_mask.iter().copied().filter(|&id| id != 0).collect();
        set.into_iter().collect()
    }

    pub fn validate(&self, d_l: usize) -> Result<()> {
        self.camera.validate()?;
        let expected = self.camera.pixel_count();
        if self.instance_mask.len() != expected {
            return Err(Error::ShapeMismatch {
                field: "instance_mask".into(),
                expected,
                found: self.instance_mask.len(),
            });
        }
        for id in self.segment_ids() {
            if !self.segment_language.contains_key(&id) && !self.language_free.contains(&id) {
                return Err(Error::invalid(format!(
                    "segment {id} has no language entry and is not listed as language-free"
                )));
            }
        }
        for (id, v) in &self.segment_language {
            if v.len() != d_l {
                return Err(Error::ShapeMismatch {
                    field: format!("segment_language[{id}]"),
                    expected: d_l,
                    found: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Pipeline progress recorded alongside a scene.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMarkers {
    pub trained: bool,
    /// Mapper kind (`"kernel"` or `"mlp"`) once a language field exists.
    pub mapped: Option<String>,
}

/// A set of Gaussians with instance/language fields and their supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub d_i: usize,
    pub d_l: usize,
    pub positions: Vec<[f32; 3]>,
    pub scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub opacities: Vec<f32>,
    pub colors: Vec<[f32; 3]>,
    /// `N × d_i` row-major.
    pub instance: Vec<f32>,
    /// `N × d_l` row-major, present once a language field is materialized.
    pub language: Option<Vec<f32>>,
    pub object_ids: Option<Vec<u32>>,
    pub views: Vec<ViewSupervision>,
    /// Ground-truth embeddings per object ID, synthetic scenes only.
    pub vocabulary: Option<BTreeMap<u32, Vec<f32>>>,
    pub stage: StageMarkers,
}

impl GaussianScene {
    pub fn new(d_i: usize, d_l: usize) -> Self {
        GaussianScene {
            d_i,
            d_l,
            positions: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
            opacities: Vec::new(),
            colors: Vec::new(),
            instance: Vec::new(),
            language: None,
            object_ids: None,
            views: Vec::new(),
            vocabulary: None,
            stage: StageMarkers::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends a Gaussian. Optional attributes must be present on every
    /// Gaussian or on none.
    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        validate_gaussian(&g, self.d_i, self.d_l)?;
        let first = self.is_empty();
        match (&mut self.language, g.language_feature) {
            (Some(lang), Some(l)) => lang.extend_from_slice(&l),
            (None, Some(l)) if first => self.language = Some(l),
            (None, None) => {}
            _ => return Err(Error::invalid("language features must be set on all Gaussians or none")),
        }
        match (&mut self.object_ids, g.gt_object_id) {
            (Some(ids), Some(id)) => ids.push(id),
            (None, Some(id)) if first => self.object_ids = Some(vec![id]),
            (None, None) => {}
            _ => return Err(Error::invalid("gt_object_id must be set on all Gaussians or none")),
        }
        self.positions.push(g.position);
        self.scales.push(g.scale);
        self.rotations.push(g.rotation);
        self.opacities.push(g.opacity);
        self.colors.push(g.color);
        self.instance.extend_from_slice(&g.instance_feature);
        Ok(())
    }

    pub fn gaussian(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            opacity: self.opacities[i],
            color: self.colors[i],
            instance_feature: self.instance_feature(i).to_vec(),
            language_feature: self.language_feature(i).map(<[f32]>::to_vec),
            gt_object_id: self.object_ids.as_ref().map(|ids| ids[i]),
        }
    }

    pub fn instance_feature(&self, i: usize) -> &[f32] {
        &self.instance[i * self.d_i..(i + 1) * self.d_i]
    }

    pub fn language_feature(&self, i: usize) -> Option<&[f32]> {
        self.language
            .as_ref()
            .map(|l| &l[i * self.d_l..(i + 1) * self.d_l])
    }

    /// Indices of Gaussians whose ground-truth object is `id`.
    pub fn object_members(&self, id: u32) -> Vec<usize> {
        self.object_ids
            .as_ref()
            .map(|ids| {
                ids.iter()
                    .enumerate()
                    .filter(|(_, &g)| g == id)
                    .map(|(i, _)| i)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Sorted object IDs known to the scene (vocabulary keys, else the
    /// distinct nonzero ground-truth IDs).
    pub fn object_id_list(&self) -> Vec<u32> {
        if let Some(v) = &self.vocabulary {
            return v.keys().copied().collect();
        }
        let set: BTreeSet<u32> = self
            .object_ids
            .iter()
            .flatten()
            .copied()
            .filter(|&id| id != 0)
            .collect();
        set.into_iter().collect()
    }

    /// Checks every structural invariant of the scene.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.d_i == 0 || self.d_l == 0 {
            return Err(Error::invalid("d_i and d_l must be positive"));
        }
        check_len("scales", n, self.scales.len())?;
        check_len("rotations", n, self.rotations.len())?;
        check_len("opacities", n, self.opacities.len())?;
        check_len("colors", n, self.colors.len())?;
        check_len("instance", n * self.d_i, self.instance.len())?;
        if let Some(l) = &self.language {
            check_len("language", n * self.d_l, l.len())?;
        }
        if let Some(ids) = &self.object_ids {
            check_len("object_ids", n, ids.len())?;
        }
        for i in 0..n {
            validate_gaussian(&self.gaussian(i), self.d_i, self.d_l)
                .map_err(|e| Error::invalid(format!("gaussian {i}: {e}")))?;
        }
        if let Some(vocab) = &self.vocabulary {
            for (id, v) in vocab {
                if v.len() != self.d_l {
                    return Err(Error::ShapeMismatch {
                        field: format!("vocabulary[{id}]"),
                        expected: self.d_l,
                        found: v.len(),
                    });
                }
            }
            if let Some(ids) = &self.object_ids {
                if let Some(bad) = ids.iter().find(|&&id| id != 0 && !vocab.contains_key(&id)) {
                    return Err(Error::invalid(format!("object id {bad} missing from vocabulary")));
                }
            }
        }
        for view in &self.views {
            view.validate(self.d_l)?;
        }
        Ok(())
    }
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            field: field.into(),
            expected,
            found,
        });
    }
    Ok(())
}

fn validate_gaussian(g: &Gaussian, d_i: usize, d_l: usize) -> Result<()> {
    let q = g.rotation;
    let qn = (q.iter().map(|&v| v as f64 * v as f64).sum::<f64>()).sqrt();
    if (qn - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("rotation norm {qn} is not unit")));
    }
    if g.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("scale components must be positive and finite"));
    }
    if !(0.0..=1.0).contains(&g.opacity) {
        return Err(Error::invalid(format!("opacity {} outside [0, 1]", g.opacity)));
    }
    if g.instance_feature.len() != d_i {
        return Err(Error::ShapeMismatch {
            field: "instance_feature".into(),
            expected: d_i,
            found: g.instance_feature.len(),
        });
    }
    if let Some(l) = &g.language_feature {
        if l.len() != d_l {
            return Err(Error::ShapeMismatch {
                field: "language_feature".into(),
                expected: d_l,
                found: l.len(),
            });
        }
    }
    Ok(())
}

/// Unit quaternion from four normal draws; used by the generator and tests.
pub(crate) fn unit_quaternion(raw: [f64; 4]) -> [f32; 4] {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = if n > 1e-12 {
        raw.map(|v| v / n)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    };
    let mut out = q.map(|v| v as f32);
    // f32 rounding can leave the norm a few ulps off.
    linalg::normalize_in_place(&mut out);
    out
}
