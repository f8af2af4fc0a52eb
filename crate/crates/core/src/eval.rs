//! Segmentation scoring and the three-way ablation benchmark.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, InstanceIndex, Query, SimilarityThreshold};
use crate::linalg;
use crate::rasterizer::{RasterConfig, ViewRaster};
use crate::scene::{Camera, GaussianScene};

pub const DEFAULT_ACC_THRESHOLD: f64 = 0.25;
/// Rendered alpha at or above this counts as foreground.
pub const MASK_ALPHA_THRESHOLD: f32 = 0.5;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

/// `|pred ∩ gt| / |pred ∪ gt|`. Duplicates are ignored.
pub fn iou_3d(pred: &[usize], gt: &[usize]) -> Result<f64> {
    let gt: BTreeSet<usize> = gt.iter().copied().collect();
    if gt.is_empty() {
        return Err(Error::invalid("ground-truth set is empty"));
    }
    let pred: BTreeSet<usize> = pred.iter().copied().collect();
    let inter = pred.intersection(&gt).count();
    let union = pred.len() + gt.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Pixel-set IoU of two binary masks; two empty masks score 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Foreground mask of `selection` rendered alone (alpha ≥ 0.5).
pub fn selection_mask(scene: &GaussianScene, selection: &[usize], camera: &Camera) -> Vec<bool> {
    let mut keep = vec![false; scene.len()];
    for &i in selection {
        if i < keep.len() {
            keep[i] = true;
        }
    }
    ViewRaster::with_filter(scene, camera, &RasterConfig::default(), |i| keep[i])
        .alpha()
        .into_iter()
        .map(|a| a >= MASK_ALPHA_THRESHOLD)
        .collect()
}

/// Renders `pred` alone in `camera` and compares its foreground with `gt_mask`.
pub fn iou_2d_rendered(scene: &GaussianScene, pred: &[usize], camera: &Camera, gt_mask: &[bool]) -> Result<f64> {
    camera.validate()?;
    if gt_mask.len() != camera.pixel_count() {
        return Err(Error::ShapeMismatch {
            field: "gt_mask".into(),
            expected: camera.pixel_count(),
            found: gt_mask.len(),
        });
    }
    Ok(mask_iou(&selection_mask(scene, pred, camera), gt_mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMode {
    /// k-means over instance features; the cluster with the highest mean relevance wins.
    InstanceOnly,
    /// Relevance above tau, no refinement.
    LanguageOnly,
    /// Full relevance-guided region growing.
    Collaborative,
}

impl BenchmarkMode {
    pub const ALL: [BenchmarkMode; 3] = [
        BenchmarkMode::InstanceOnly,
        BenchmarkMode::LanguageOnly,
        BenchmarkMode::Collaborative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkMode::InstanceOnly => "instance_only",
            BenchmarkMode::LanguageOnly => "language_only",
            BenchmarkMode::Collaborative => "collaborative",
        }
    }

    fn table_name(self) -> &'static str {
        match self {
            BenchmarkMode::InstanceOnly => "Instance branch",
            BenchmarkMode::LanguageOnly => "Language branch",
            BenchmarkMode::Collaborative => "Collaborative",
        }
    }
}

impl std::str::FromStr for BenchmarkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "instance_only" | "instance" => Ok(BenchmarkMode::InstanceOnly),
            "language_only" | "language" => Ok(BenchmarkMode::LanguageOnly),
            "collaborative" => Ok(BenchmarkMode::Collaborative),
            _ => Err(format!(
                "unknown mode `{s}` (expected instance_only, language_only or collaborative)"
            )),
        }
    }
}

/// One scored query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryCase {
    pub label: String,
    pub query: Query,
    /// Ascending ground-truth Gaussian indices.
    pub gt_gaussians: Vec<usize>,
    /// Per-view ground-truth foreground masks, aligned with `scene.views`.
    pub gt_masks: Option<Vec<Vec<bool>>>,
}

/// Serialized form of a case; either an object ID of a scene with a
/// vocabulary, or an explicit embedding with canonicals and ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseSpec {
    pub label: Option<String>,
    pub object_id: Option<u32>,
    pub embedding: Option<Vec<f32>>,
    pub canonical: Option<Vec<Vec<f32>>>,
    pub gt_gaussians: Option<Vec<usize>>,
}

impl CaseSpec {
    pub fn object(id: u32) -> Self {
        CaseSpec {
            object_id: Some(id),
            ..CaseSpec::default()
        }
    }

    pub fn resolve(&self, scene: &GaussianScene, cfg: &BenchmarkConfig) -> Result<QueryCase> {
        let mut query = match (&self.object_id, &self.embedding) {
            (Some(id), None) => inference::synthetic_query(scene, *id, cfg.seed)?,
            (None, Some(e)) => {
                let canonical = self
                    .canonical
                    .clone()
                    .ok_or_else(|| Error::invalid("a case with an explicit embedding needs `canonical`"))?;
                let e = linalg::normalized(e).ok_or_else(|| Error::invalid("case embedding is zero"))?;
                Query::new(e, canonical)
            }
            _ => return Err(Error::invalid("a case needs exactly one of `object_id` or `embedding`")),
        };
        query.tau = cfg.tau;
        query.threshold = cfg.threshold;
        if let Some(l) = &self.label {
            query.label = l.clone();
        }
        let mut gt = match (&self.gt_gaussians, self.object_id) {
            (Some(g), _) => g.clone(),
            (None, Some(id)) => scene.object_members(id),
            (None, None) => return Err(Error::invalid("a case with an explicit embedding needs `gt_gaussians`")),
        };
        gt.sort_unstable();
        gt.dedup();
        if gt.is_empty() {
            return Err(Error::invalid(format!("case `{}` has an empty ground truth", query.label)));
        }
        if let Some(&bad) = gt.iter().find(|&&i| i >= scene.len()) {
            return Err(Error::invalid(format!("ground-truth index {bad} out of range")));
        }
        let gt_masks = cfg.with_2d.then(|| {
            scene
                .views
                .par_iter()
                .map(|v| selection_mask(scene, &gt, &v.camera))
                .collect()
        });
        Ok(QueryCase {
            label: query.label.clone(),
            query,
            gt_gaussians: gt,
            gt_masks,
        })
    }
}

/// One case per vocabulary object, in ID order.
pub fn synthetic_cases(scene: &GaussianScene, cfg: &BenchmarkConfig) -> Result<Vec<QueryCase>> {
    let vocab = scene
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::invalid("scene has no vocabulary to build cases from"))?;
    vocab
        .keys()
        .filter(|&&id| !scene.object_members(id).is_empty())
        .map(|&id| CaseSpec::object(id).resolve(scene, cfg))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub tau: f64,
    pub threshold: SimilarityThreshold,
    pub acc_threshold: f64,
    /// k for the instance-only baseline; defaults to the number of objects.
    pub clusters: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    /// Also score rendered 2D masks in every view.
    pub with_2d: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            tau: inference::DEFAULT_TAU,
            threshold: SimilarityThreshold::default(),
            acc_threshold: DEFAULT_ACC_THRESHOLD,
            clusters: None,
            restarts: KMEANS_RESTARTS,
            seed: 0,
            with_2d: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub label: String,
    pub iou_3d: f64,
    pub iou_2d: Option<f64>,
    pub selected: usize,
    /// Wall-clock seconds; kept out of the serialized report.
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: BenchmarkMode,
    pub acc_threshold: f64,
    pub per_query: Vec<QueryScore>,
    pub miou: f64,
    pub macc: f64,
    pub miou_2d: Option<f64>,
}

impl EvalReport {
    pub fn from_scores(mode: BenchmarkMode, per_query: Vec<QueryScore>, acc_threshold: f64) -> Self {
        let n = per_query.len().max(1) as f64;
        let miou = per_query.iter().map(|q| q.iou_3d).sum::<f64>() / n;
        let macc = per_query.iter().filter(|q| q.iou_3d >= acc_threshold).count() as f64 / n;
        let miou_2d = per_query
            .iter()
            .map(|q| q.iou_2d)
            .collect::<Option<Vec<f64>>>()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        EvalReport {
            mode,
            acc_threshold,
            per_query,
            miou,
            macc,
            miou_2d,
        }
    }

    pub fn mean_runtime_s(&self) -> f64 {
        self.per_query.iter().map(|q| q.runtime_s).sum::<f64>() / self.per_query.len().max(1) as f64
    }
}

/// Plain-text table, one row per mode. The time column is optional so the
/// deterministic report can omit it.
pub fn render_table(reports: &[EvalReport], with_time: bool) -> String {
    let mut out = String::new();
    let has_2d = reports.iter().any(|r| r.miou_2d.is_some());
    let _ = write!(out, "{:<18} {:>8} {:>8}", "Mode", "mIoU", "mAcc");
    if has_2d {
        let _ = write!(out, " {:>8}", "mIoU-2D");
    }
    if with_time {
        let _ = write!(out, " {:>10}", "Time");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<18} {:>8.2} {:>8.2}", r.mode.table_name(), 100.0 * r.miou, 100.0 * r.macc);
        if has_2d {
            match r.miou_2d {
                Some(v) => {
                    let _ = write!(out, " {:>8.2}", 100.0 * v);
                }
                None => {
                    let _ = write!(out, " {:>8}", "-");
                }
            }
        }
        if with_time {
            let _ = write!(out, " {:>8.4} s", r.mean_runtime_s());
        }
        out.push('\n');
    }
    out
}

/// Result of [`kmeans`].
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<f32>,
    pub inertia: f64,
}

/// Seeded k-means++ / Lloyd over `N × dim` rows, best of `restarts` by inertia.
pub fn kmeans(data: &[f32], dim: usize, k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    let n = data.len() / dim.max(1);
    if dim == 0 || data.len() != n * dim {
        return Err(Error::invalid("k-means data is not a whole number of rows"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let c = lloyd(data, dim, n, k, &mut rng);
        if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
}

fn lloyd(data: &[f32], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(row(i), &centroids, dim).0)
            .collect();
        let changed = next != labels;
        labels = next;
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row(i)) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| nearest_centroid(row(i), &centroids, dim).1).sum();
    Clustering {
        labels,
        centroids,
        inertia,
    }
}

fn nearest_centroid(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    centroids
        .chunks_exact(dim)
        .map(|c| sq_dist(x, c))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (c, d)| if d < best.1 { (c, d) } else { best })
}

/// Runs every case under every requested mode.
pub fn run_benchmark(
    scene: &GaussianScene,
    cases: &[QueryCase],
    modes: &[BenchmarkMode],
    cfg: &BenchmarkConfig,
) -> Result<Vec<EvalReport>> {
    if scene.language.is_none() {
        return Err(Error::StageOrder("benchmark needs a mapped language field".into()));
    }
    let index = InstanceIndex::new(scene);
    let clustering = if modes.contains(&BenchmarkMode::InstanceOnly) {
        let k = match cfg.clusters {
            Some(k) => k,
            None => scene.object_id_list().iter().filter(|&&id| id != 0).count().max(1),
        };
        let unit = linalg::normalize_rows(&scene.instance, scene.d_i);
        Some(kmeans(&unit, scene.d_i, k, cfg.restarts, cfg.seed)?)
    } else {
        None
    };

    let mut scores: Vec<Vec<QueryScore>> = vec![Vec::new(); modes.len()];
    for case in cases {
        let start = Instant::now();
        let relevance = inference::compute_relevance(scene, &case.query)?;
        let relevance_time = start.elapsed().as_secs_f64();
        for (slot, &mode) in modes.iter().enumerate() {
            let start = Instant::now();
            let selected = match mode {
                BenchmarkMode::InstanceOnly => {
                    let c = clustering.as_ref().expect("computed when requested");
                    pick_cluster(&c.labels, &relevance)
                }
                BenchmarkMode::LanguageOnly => (0..scene.len()).filter(|&i| relevance[i] > case.query.tau).collect(),
                BenchmarkMode::Collaborative => {
                    inference::refine_with(scene, &index, relevance.clone(), case.query.tau, case.query.threshold)
                        .selected
                }
            };
            let runtime_s = relevance_time + start.elapsed().as_secs_f64();
            let iou_2d = match &case.gt_masks {
                Some(masks) => {
                    let per_view: Vec<f64> = scene
                        .views
                        .par_iter()
                        .zip(masks)
                        .map(|(v, m)| iou_2d_rendered(scene, &selected, &v.camera, m))
                        .collect::<Result<_>>()?;
                    Some(per_view.iter().sum::<f64>() / per_view.len().max(1) as f64)
                }
                None => None,
            };
            scores[slot].push(QueryScore {
                label: case.label.clone(),
                iou_3d: iou_3d(&selected, &case.gt_gaussians)?,
                iou_2d,
                selected: selected.len(),
                runtime_s,
            });
        }
    }
    Ok(modes
        .iter()
        .zip(scores)
        .map(|(&mode, s)| EvalReport::from_scores(mode, s, cfg.acc_threshold))
        .collect())
}

/// Members of the cluster with the highest mean relevance (lowest label on ties).
fn pick_cluster(labels: &[usize], relevance: &[f64]) -> Vec<usize> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum = vec![0f64; k];
    let mut count = vec![0usize; k];
    for (&l, &r) in labels.iter().zip(relevance) {
        sum[l] += r;
        count[l] += 1;
    }
    let best = (0..k)
        .filter(|&c| count[c] > 0)
        .map(|c| (c, sum[c] / count[c] as f64))
        .fold(None, |b: Option<(usize, f64)>, (c, m)| match b {
            Some((_, bm)) if bm >= m => b,
            _ => Some((c, m)),
        });
    match best {
        Some((c, _)) => (0..labels.len()).filter(|&i| labels[i] == c).collect(),
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        assert_eq!(iou_3d(&[1, 2, 3], &[3, 2, 1]).unwrap(), 1.0);
        assert_eq!(iou_3d(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(iou_3d(&[], &[3]).unwrap(), 0.0);
        assert_eq!(iou_3d(&[1, 2], &[2, 3]).unwrap(), 1.0 / 3.0);
        assert!(iou_3d(&[1], &[]).is_err());
    }

    #[test]
    fn mask_iou_conventions() {
        assert_eq!(mask_iou(&[false; 4], &[false; 4]), 1.0);
        assert_eq!(mask_iou(&[true, false], &[false, false]), 0.0);
        assert_eq!(mask_iou(&[true, true, false], &[true, false, true]), 1.0 / 3.0);
    }

    #[test]
    fn kmeans_separates_obvious_clusters() {
        let mut data = Vec::new();
        for c in 0..3 {
            for j in 0..10 {
                data.extend_from_slice(&[c as f32 * 10.0 + j as f32 * 0.01, -(c as f32) * 5.0]);
            }
        }
        let r = kmeans(&data, 2, 3, 10, 7).unwrap();
        for c in 0..3 {
            let l = r.labels[c * 10];
            assert!(r.labels[c * 10..(c + 1) * 10].iter().all(|&x| x == l));
        }
        let distinct: BTreeSet<usize> = r.labels.iter().copied().collect();
        assert_eq!(distinct.len(), 3);
        assert_eq!(kmeans(&data, 2, 3, 10, 7).unwrap(), r);
        assert!(kmeans(&data, 2, 31, 1, 0).is_err());
    }

    #[test]
    fn pick_cluster_prefers_highest_mean() {
        let labels = [0, 0, 1, 1, 2];
        let rel = [0.9, 0.1, 0.6, 0.6, 0.55];
        assert_eq!(pick_cluster(&labels, &rel), vec![2, 3]);
    }

    #[test]
    fn aggregates_follow_definitions() {
        let q = |v: f64| QueryScore {
            label: String::new(),
            iou_3d: v,
            iou_2d: None,
            selected: 0,
            runtime_s: 0.0,
        };
        let r = EvalReport::from_scores(BenchmarkMode::Collaborative, vec![q(0.1), q(0.25), q(0.9)], 0.25);
        assert!((r.miou - 1.25 / 3.0).abs() < 1e-12);
        assert!((r.macc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.miou_2d, None);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("instance-only".parse::<BenchmarkMode>().unwrap(), BenchmarkMode::InstanceOnly);
        assert_eq!("collaborative".parse::<BenchmarkMode>().unwrap(), BenchmarkMode::Collaborative);
        assert!("both".parse::<BenchmarkMode>().is_err());
    }
}
