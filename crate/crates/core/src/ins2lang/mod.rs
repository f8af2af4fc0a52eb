//! Instance-to-language mapping.
//!
//! Rendered instance features are averaged per 2D segment and paired with
//! that segment's language embedding. A mapping fitted on those pairs
//! (Nadaraya-Watson kernel regression or a shallow MLP) is then evaluated on
//! every Gaussian's instance feature to materialize the language field.
//!
//! All language vectors are kept at unit length: pair targets, mapped
//! outputs and (downstream) queries.

mod direct;
mod io;
mod kernel;
mod mlp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rasterizer::{RasterConfig, ViewRaster};
use crate::scene::{GaussianScene, MASK_ALPHA_MIN};

pub use direct::{fit_direct_language_field, DirectConfig};
pub use io::{load_mapping, save_mapping, MAPPING_DIR};
pub use kernel::KernelMapping;
pub use mlp::{fit_mlp, MlpConfig, MlpMapping};

/// Default kernel bandwidth.
pub const DEFAULT_SIGMA: f32 = 0.1;
/// Default minimum covered pixels for a segment to yield a pair.
pub const DEFAULT_MIN_PIXELS: usize = 20;
/// Pair budget for kernel evaluation over a whole scene.
pub const DEFAULT_MAX_PAIRS: usize = 4096;

/// Segment-wise `(instance, language)` training pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingPairSet {
    pub d_i: usize,
    pub d_l: usize,
    /// `M × d_i`.
    pub instance: Vec<f32>,
    /// `M × d_l`, unit rows.
    pub language: Vec<f32>,
    /// `(view_index, segment_id)` per pair.
    pub sources: Vec<(usize, u32)>,
}

impl MappingPairSet {
    pub fn new(d_i: usize, d_l: usize) -> Self {
        MappingPairSet {
            d_i,
            d_l,
            instance: Vec::new(),
            language: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn instance_row(&self, m: usize) -> &[f32] {
        &self.instance[m * self.d_i..(m + 1) * self.d_i]
    }

    pub fn language_row(&self, m: usize) -> &[f32] {
        &self.language[m * self.d_l..(m + 1) * self.d_l]
    }

    /// Appends a pair; the language vector is re-normalized.
    pub fn push(&mut self, instance: &[f32], language: &[f32], source: (usize, u32)) -> Result<()> {
        if instance.len() != self.d_i || language.len() != self.d_l {
            return Err(Error::invalid("pair vector length does not match the pair set"));
        }
        let unit = linalg::normalized(language)
            .ok_or_else(|| Error::invalid(format!("zero language vector for segment {source:?}")))?;
        self.instance.extend_from_slice(instance);
        self.language.extend_from_slice(&unit);
        self.sources.push(source);
        Ok(())
    }

    /// Uniform seeded subsample of at most `max` pairs, original order kept.
    pub fn subsample(&self, max: usize, seed: u64) -> MappingPairSet {
        if self.len() <= max {
            return self.clone();
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, self.len(), max).into_vec();
        keep.sort_unstable();
        let mut out = MappingPairSet::new(self.d_i, self.d_l);
        for m in keep {
            out.instance.extend_from_slice(self.instance_row(m));
            out.language.extend_from_slice(self.language_row(m));
            out.sources.push(self.sources[m]);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if m == 0 {
            return Err(Error::NoSupervision("mapping pair set is empty".into()));
        }
        if self.instance.len() != m * self.d_i || self.language.len() != m * self.d_l {
            return Err(Error::invalid("mapping pair tensors disagree with the pair count"));
        }
        if let Some(k) = (0..m).find(|&k| !linalg::is_unit(self.language_row(k), 1e-5)) {
            return Err(Error::invalid(format!("pair {k} language vector is not unit length")));
        }
        Ok(())
    }
}

/// Groups rendered instance features by segment on every view. A segment
/// yields a pair when it has a language entry and at least `min_pixels`
/// pixels with alpha >= [`MASK_ALPHA_MIN`].
pub fn build_training_pairs(scene: &GaussianScene, min_pixels: usize) -> Result<MappingPairSet> {
    let cfg = RasterConfig::default();
    let d = scene.d_i;
    let per_view: Vec<Result<Vec<(u32, Vec<f32>)>>> = scene
        .views
        .par_iter()
        .map(|view| {
            let out = ViewRaster::new(scene, &view.camera, &cfg).forward(&scene.instance, d)?;
            let mut groups = Vec::new();
            for id in view.segment_ids() {
                if !view.segment_language.contains_key(&id) {
                    continue;
                }
                let mut sum = vec![0f64; d];
                let mut count = 0usize;
                for (p, &m) in view.instance_mask.iter().enumerate() {
                    if m != id || out.alpha[p] < MASK_ALPHA_MIN {
                        continue;
                    }
                    count += 1;
                    for (s, &v) in sum.iter_mut().zip(&out.data[p * d..(p + 1) * d]) {
                        *s += v as f64;
                    }
                }
                if count >= min_pixels.max(1) {
                    groups.push((id, sum.into_iter().map(|s| (s / count as f64) as f32).collect()));
                }
            }
            Ok(groups)
        })
        .collect();

    let mut pairs = MappingPairSet::new(scene.d_i, scene.d_l);
    for (v, groups) in per_view.into_iter().enumerate() {
        for (id, mean) in groups? {
            pairs.push(&mean, &scene.views[v].segment_language[&id], (v, id))?;
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoSupervision(format!(
            "no segment with a language entry covers >= {min_pixels} rendered pixels in any of {} views",
            scene.views.len()
        )));
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapperKind {
    Kernel,
    Mlp,
}

impl MapperKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapperKind::Kernel => "kernel",
            MapperKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for MapperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kernel" => Ok(MapperKind::Kernel),
            "mlp" => Ok(MapperKind::Mlp),
            other => Err(format!("unknown mapper `{other}` (expected kernel or mlp)")),
        }
    }
}

/// A fitted instance → language mapping.
#[derive(Clone, Debug, PartialEq)]
pub enum MappingFunction {
    Kernel(KernelMapping),
    Mlp(MlpMapping),
}

impl MappingFunction {
    pub fn kind(&self) -> MapperKind {
        match self {
            MappingFunction::Kernel(_) => MapperKind::Kernel,
            MappingFunction::Mlp(_) => MapperKind::Mlp,
        }
    }

    pub fn d_i(&self) -> usize {
        match self {
            MappingFunction::Kernel(k) => k.pairs().d_i,
            MappingFunction::Mlp(m) => m.widths()[0],
        }
    }

    pub fn d_l(&self) -> usize {
        match self {
            MappingFunction::Kernel(k) => k.pairs().d_l,
            MappingFunction::Mlp(m) => *m.widths().last().expect("mlp has layers"),
        }
    }

    /// Unit-length language vector for one instance feature.
    pub fn map(&self, instance: &[f32]) -> Vec<f32> {
        match self {
            MappingFunction::Kernel(k) => k.regress(instance),
            MappingFunction::Mlp(m) => m.predict(instance),
        }
    }

    /// Maps an `N × d_i` matrix row by row.
    pub fn map_rows(&self, instance: &[f32]) -> Vec<f32> {
        let d_i = self.d_i();
        match self {
            MappingFunction::Kernel(k) => instance
                .par_chunks(d_i)
                .flat_map_iter(|row| k.regress(row))
                .collect(),
            MappingFunction::Mlp(m) => m.predict_rows(instance),
        }
    }
}

/// Returns a copy of `scene` whose language field is `Φ(instance)` on every Gaussian.
pub fn apply_mapping(scene: &GaussianScene, mapping: &MappingFunction) -> Result<GaussianScene> {
    if mapping.d_i() != scene.d_i || mapping.d_l() != scene.d_l {
        return Err(Error::invalid(format!(
            "mapping is {}→{} but the scene is {}→{}",
            mapping.d_i(),
            mapping.d_l(),
            scene.d_i,
            scene.d_l
        )));
    }
    let mut out = scene.clone();
    out.language = Some(mapping.map_rows(&scene.instance));
    out.stage.mapped = Some(mapping.kind().as_str().to_string());
    Ok(out)
}

/// Mean language feature of each ground-truth object, compared by cosine to
/// its vocabulary vector. Returns `(object_id, cosine)` pairs.
pub fn vocabulary_fidelity(scene: &GaussianScene) -> Option<Vec<(u32, f64)>> {
    let vocab = scene.vocabulary.as_ref()?;
    scene.language.as_ref()?;
    let mut out = Vec::new();
    for (&id, target) in vocab {
        let members = scene.object_members(id);
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0f32; scene.d_l];
        for &i in &members {
            for (m, &v) in mean.iter_mut().zip(scene.language_feature(i).expect("checked above")) {
                *m += v / members.len() as f32;
            }
        }
        out.push((id, linalg::cosine(&mean, target)));
    }
    Some(out)
}
