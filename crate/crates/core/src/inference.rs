//! Query-time segmentation.
//!
//! A query embedding is scored against every Gaussian's language feature,
//! relative to a list of canonical (background) embeddings:
//!
//! ```text
//! R = min_i exp(L·q) / (exp(L·q) + exp(L·c_i))
//! ```
//!
//! Gaussians with `R > tau` are seeds. Seeds are visited by descending
//! relevance; each uncovered seed grows a region of Gaussians whose instance
//! features have cosine similarity `>= T` with its own, and the region is
//! kept when its opacity-weighted mean relevance exceeds `tau`. The final
//! segmentation is the union of kept regions.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scene::GaussianScene;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_SIM_THRESHOLD: f32 = 0.8;
/// Clamp range for the automatic similarity threshold.
pub const AUTO_THRESHOLD_RANGE: (f32, f32) = (0.6, 0.95);
const AUTO_HISTOGRAM_BINS: usize = 256;
const AUTO_MAX_SEEDS: usize = 512;

/// Region-growing similarity threshold. Serialized as a number or `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimilarityThreshold {
    Fixed(f32),
    /// Otsu split of seed-to-scene cosine similarities, clamped to
    /// [`AUTO_THRESHOLD_RANGE`].
    Auto,
}

impl Default for SimilarityThreshold {
    fn default() -> Self {
        SimilarityThreshold::Fixed(DEFAULT_SIM_THRESHOLD)
    }
}

impl std::str::FromStr for SimilarityThreshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(SimilarityThreshold::Auto);
        }
        let t: f32 = s
            .parse()
            .map_err(|_| format!("similarity threshold must be a number or `auto`, got `{s}`"))?;
        Ok(SimilarityThreshold::Fixed(t))
    }
}

impl Serialize for SimilarityThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SimilarityThreshold::Fixed(t) => s.serialize_f32(*t),
            SimilarityThreshold::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for SimilarityThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(t) => Ok(SimilarityThreshold::Fixed(t)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::fmt::Display for SimilarityThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimilarityThreshold::Fixed(t) => write!(f, "{t}"),
            SimilarityThreshold::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub embedding: Vec<f32>,
    pub canonical: Vec<Vec<f32>>,
    pub tau: f64,
    pub threshold: SimilarityThreshold,
    pub label: String,
}

impl Query {
    pub fn new(embedding: Vec<f32>, canonical: Vec<Vec<f32>>) -> Self {
        Query {
            embedding,
            canonical,
            tau: DEFAULT_TAU,
            threshold: SimilarityThreshold::default(),
            label: String::new(),
        }
    }

    pub fn validate(&self, d_l: usize) -> Result<()> {
        if self.embedding.len() != d_l {
            return Err(Error::ShapeMismatch {
                field: "query embedding".into(),
                expected: d_l,
                found: self.embedding.len(),
            });
        }
        if !linalg::is_unit(&self.embedding, 1e-5) {
            return Err(Error::invalid("query embedding must be unit length"));
        }
        if self.canonical.is_empty() {
            return Err(Error::invalid("a query needs at least one canonical embedding"));
        }
        for (k, c) in self.canonical.iter().enumerate() {
            if c.len() != d_l || !linalg::is_unit(c, 1e-5) {
                return Err(Error::invalid(format!("canonical embedding {k} must be a unit {d_l}-vector")));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if let SimilarityThreshold::Fixed(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!("similarity threshold must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

/// Pairwise-softmax relevance of one language vector, minimized over canons.
pub fn relevance_of(language: &[f32], query: &[f32], canonical: &[Vec<f32>]) -> f64 {
    let q = linalg::dot_f64(language, query);
    canonical
        .iter()
        .map(|c| {
            // exp(q) / (exp(q) + exp(c)) with the larger exponent shifted out.
            let z = linalg::dot_f64(language, c) - q;
            if z > 0.0 {
                let e = (-z).exp();
                e / (e + 1.0)
            } else {
                1.0 / (1.0 + z.exp())
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Per-Gaussian relevance of `query`.
pub fn compute_relevance(scene: &GaussianScene, query: &Query) -> Result<Vec<f64>> {
    query.validate(scene.d_l)?;
    let language = scene
        .language
        .as_ref()
        .ok_or_else(|| Error::StageOrder("scene has no language field; run the mapping first".into()))?;
    Ok(language
        .par_chunks(scene.d_l)
        .map(|l| relevance_of(l, &query.embedding, &query.canonical))
        .collect())
}

/// L2-normalized instance features, the metric space of region growing.
#[derive(Clone, Debug)]
pub struct InstanceIndex {
    dim: usize,
    unit: Vec<f32>,
}

impl InstanceIndex {
    pub fn new(scene: &GaussianScene) -> Self {
        InstanceIndex {
            dim: scene.d_i,
            unit: linalg::normalize_rows(&scene.instance, scene.d_i),
        }
    }

    pub fn len(&self) -> usize {
        self.unit.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cosine(&self, a: usize, b: usize) -> f32 {
        linalg::dot(self.row(a), self.row(b))
    }

    /// `{w : cos(I_w, I_center) >= t} ∪ {center}`, ascending.
    pub fn expand(&self, center: usize, t: f32) -> Vec<usize> {
        let c = self.row(center);
        (0..self.len())
            .into_par_iter()
            .filter(|&w| w == center || linalg::dot(self.row(w), c) >= t)
            .collect()
    }
}

/// Region grown from `center` at similarity threshold `t`.
pub fn expand_region(scene: &GaussianScene, center: usize, t: f32) -> Result<Vec<usize>> {
    if center >= scene.len() {
        return Err(Error::invalid(format!("center {center} out of range")));
    }
    Ok(InstanceIndex::new(scene).expand(center, t))
}

/// Opacity-weighted mean relevance of `members`; `None` when their opacities sum to zero.
pub fn region_score(opacities: &[f32], members: &[usize], relevance: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0f64, 0f64);
    for &w in members {
        num += opacities[w] as f64 * relevance[w];
        den += opacities[w] as f64;
    }
    (den > 0.0).then(|| num / den)
}

/// Otsu threshold over the cosine similarities between seeds and every
/// Gaussian, clamped to [`AUTO_THRESHOLD_RANGE`]. At most
/// `AUTO_MAX_SEEDS` seeds (evenly strided) enter the histogram.
pub fn auto_threshold(index: &InstanceIndex, seeds: &[usize]) -> f32 {
    let (lo, hi) = AUTO_THRESHOLD_RANGE;
    if seeds.is_empty() {
        return DEFAULT_SIM_THRESHOLD.clamp(lo, hi);
    }
    let stride = seeds.len().div_ceil(AUTO_MAX_SEEDS);
    let picked: Vec<usize> = seeds.iter().copied().step_by(stride).collect();
    let bins = AUTO_HISTOGRAM_BINS;
    let hist = picked
        .par_iter()
        .map(|&s| {
            let mut h = vec![0u64; bins];
            for w in 0..index.len() {
                let c = index.cosine(s, w).clamp(-1.0, 1.0);
                let b = (((c + 1.0) / 2.0) * bins as f32) as usize;
                h[b.min(bins - 1)] += 1;
            }
            h
        })
        .reduce(
            || vec![0u64; bins],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let split = otsu_split(&hist);
    let t = -1.0 + 2.0 * split as f32 / bins as f32;
    t.clamp(lo, hi)
}

/// Index `k` maximizing between-class variance when bins `< k` form the
/// lower class.
fn otsu_split(hist: &[u64]) -> usize {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0f64, 0f64);
    let (mut best, mut best_k) = (-1f64, hist.len() / 2);
    for k in 1..hist.len() {
        w0 += hist[k - 1] as f64;
        sum0 += (k - 1) as f64 * hist[k - 1] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    best_k
}

/// One processed seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionTrace {
    pub center: usize,
    /// Ascending member indices.
    pub members: Vec<usize>,
    /// `None` when the members' opacities sum to zero.
    pub score: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementResult {
    /// Seed set `{R > tau}`, ascending.
    pub seeds: Vec<usize>,
    /// Processed regions in visiting order. Seeds already covered by an
    /// accepted region are skipped and do not appear.
    pub regions: Vec<RegionTrace>,
    /// Union of accepted regions, ascending.
    pub selected: Vec<usize>,
    pub relevance: Vec<f64>,
    /// Similarity threshold actually used.
    pub threshold: f32,
    pub tau: f64,
}

impl RefinementResult {
    pub fn accepted_regions(&self) -> impl Iterator<Item = &RegionTrace> {
        self.regions.iter().filter(|r| r.accepted)
    }

    /// True when no Gaussian passed the relevance threshold.
    pub fn no_seeds(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Seeds ordered by descending relevance, ties by ascending index.
pub fn seed_order(relevance: &[f64], tau: f64) -> Vec<usize> {
    let mut seeds: Vec<usize> = (0..relevance.len()).filter(|&i| relevance[i] > tau).collect();
    seeds.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
    seeds
}

/// Relevance-guided region growing through the instance field.
pub fn refine(scene: &GaussianScene, query: &Query) -> Result<RefinementResult> {
    let relevance = compute_relevance(scene, query)?;
    let index = InstanceIndex::new(scene);
    Ok(refine_with(scene, &index, relevance, query.tau, query.threshold))
}

/// [`refine`] with precomputed relevance and instance index.
pub fn refine_with(
    scene: &GaussianScene,
    index: &InstanceIndex,
    relevance: Vec<f64>,
    tau: f64,
    threshold: SimilarityThreshold,
) -> RefinementResult {
    let order = seed_order(&relevance, tau);
    let mut seeds = order.clone();
    seeds.sort_unstable();
    if order.is_empty() {
        warn!("no Gaussian has relevance above tau = {tau}; segmentation is empty");
    }
    let t = match threshold {
        SimilarityThreshold::Fixed(t) => t,
        SimilarityThreshold::Auto => auto_threshold(index, &order),
    };
    let mut covered = vec![false; scene.len()];
    let mut regions = Vec::new();
    for &center in &order {
        if covered[center] {
            continue;
        }
        let members = index.expand(center, t);
        let score = region_score(&scene.opacities, &members, &relevance);
        if score.is_none() {
            warn!("region around {center} has zero total opacity; rejected");
        }
        let accepted = score.is_some_and(|s| s > tau);
        if accepted {
            for &m in &members {
                covered[m] = true;
            }
        }
        regions.push(RegionTrace {
            center,
            members,
            score,
            accepted,
        });
    }
    let selected = (0..scene.len()).filter(|&i| covered[i]).collect();
    RefinementResult {
        seeds,
        regions,
        selected,
        relevance,
        threshold: t,
        tau,
    }
}

/// Options for [`query_by_embedding`].
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOptions {
    pub canonical: Vec<Vec<f32>>,
    pub tau: f64,
    pub threshold: SimilarityThreshold,
    pub label: String,
}

/// Refines with an arbitrary embedding (from any encoder). A non-unit
/// embedding is normalized with a warning.
pub fn query_by_embedding(scene: &GaussianScene, embedding: &[f32], options: &QueryOptions) -> Result<RefinementResult> {
    let mut emb = embedding.to_vec();
    if !linalg::is_unit(&emb, 1e-5) {
        warn!("query embedding has norm {}; normalizing", linalg::norm(&emb));
        emb = linalg::normalized(&emb).ok_or_else(|| Error::invalid("query embedding is zero or non-finite"))?;
    }
    let query = Query {
        embedding: emb,
        canonical: options.canonical.clone(),
        tau: options.tau,
        threshold: options.threshold,
        label: options.label.clone(),
    };
    refine(scene, &query)
}

/// Canonical set for a synthetic object query: the vocabulary vectors of
/// all other objects plus one seeded random unit vector.
pub fn synthetic_canonicals(scene: &GaussianScene, object_id: u32, seed: u64) -> Result<Vec<Vec<f32>>> {
    use rand::{Rng, SeedableRng};
    let vocab = scene
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::invalid("scene has no vocabulary"))?;
    if !vocab.contains_key(&object_id) {
        return Err(Error::invalid(format!("object {object_id} is not in the vocabulary")));
    }
    let mut canon: Vec<Vec<f32>> = vocab
        .iter()
        .filter(|(&id, _)| id != object_id)
        .map(|(_, v)| v.clone())
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    loop {
        let v: Vec<f32> = (0..scene.d_l)
            .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
            .collect();
        if let Some(u) = linalg::normalized(&v) {
            canon.push(u);
            break;
        }
    }
    Ok(canon)
}

/// Query for ground-truth object `object_id` of a synthetic scene.
pub fn synthetic_query(scene: &GaussianScene, object_id: u32, seed: u64) -> Result<Query> {
    let embedding = scene
        .vocabulary
        .as_ref()
        .and_then(|v| v.get(&object_id))
        .cloned()
        .ok_or_else(|| Error::invalid(format!("object {object_id} is not in the vocabulary")))?;
    let mut q = Query::new(embedding, synthetic_canonicals(scene, object_id, seed)?);
    q.label = format!("object {object_id}");
    Ok(q)
}
