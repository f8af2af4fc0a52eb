//! On-disk pipeline stages: `gen → train → map → query / eval`.
//!
//! Every stage reads a scene container, writes its declared outputs and
//! nothing else. Outputs are byte-identical across reruns with the same
//! inputs and seeds; wall-clock measurements go to separate `*.timing.json`
//! files so they never disturb that.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::config::{EvalConfig, InferenceConfig, MapperConfig};
use crate::error::{Error, Result};
use crate::eval::{self, BenchmarkConfig, CaseSpec, EvalReport};
use crate::inference::{self, Query, RefinementResult, SimilarityThreshold};
use crate::ins2lang::{self, KernelMapping, MapperKind, MappingFunction};
use crate::instance_field::{self, Separation, TrainConfig};
use crate::linalg;
use crate::ply::{self, PlyFormat};
use crate::scene::io::{read_json, write_json};
use crate::scene::{self, GaussianScene, SceneSpec, MANIFEST_FILE};

pub const GEN_FILE: &str = "gen.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRAIN_FILE: &str = "train.json";
pub const MAP_FILE: &str = "map.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// `result.json` → `result.timing.json`.
pub fn timing_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.timing.json"))
}

fn write_timing(path: &Path, seconds: f64) -> Result<()> {
    write_json(&timing_path(path), &json!({ "wall_clock_s": seconds }))
}

fn load(dir: &Path) -> Result<GaussianScene> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Error::MissingFile {
            field: "scene".into(),
            path: dir.join(MANIFEST_FILE),
        });
    }
    scene::load_scene(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates a synthetic scene into `out`. An existing scene is only
/// replaced when `force` is set.
pub fn cmd_gen(spec: &SceneSpec, out: &Path, force: bool) -> Result<GaussianScene> {
    if out.join(MANIFEST_FILE).exists() && !force {
        return Err(Error::OutputExists(out.to_path_buf()));
    }
    let start = Instant::now();
    let scene = scene::generate_synthetic_scene(spec)?;
    if force && out.join(ins2lang::MAPPING_DIR).exists() {
        let dir = out.join(ins2lang::MAPPING_DIR);
        fs::remove_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
    }
    create_dir(out)?;
    scene::save_scene(&scene, out)?;
    let record = out.join(GEN_FILE);
    write_json(&record, &json!({ "spec": spec, "n_gaussians": scene.len() }))?;
    write_timing(&record, start.elapsed().as_secs_f64())?;
    info!("generated {} Gaussians in {} views", scene.len(), scene.views.len());
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub steps_taken: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Trailing 500-step average at the last step.
    pub final_moving_average: Option<f64>,
    pub separation: Option<Separation>,
}

/// Trains the instance field from a fresh seeded initialization and writes
/// the scene to `out` with `loss.csv` and `train.json`.
pub fn cmd_train(scene_dir: &Path, out: &Path, cfg: &TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut scene = load(scene_dir)?;
    let start = Instant::now();
    instance_field::initialize_instance_features(&mut scene, cfg.seed);
    let outcome = instance_field::train_instance_field(&scene, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    create_dir(out)?;
    // A stale mapping would no longer match the retrained field.
    let mapping = out.join(ins2lang::MAPPING_DIR);
    if mapping.exists() {
        fs::remove_dir_all(&mapping).map_err(|e| Error::io(&mapping, e))?;
    }
    scene::save_scene(&outcome.scene, out)?;

    let mut csv = String::from("step,loss\n");
    for (k, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{k},{l}\n"));
    }
    let loss_path = out.join(LOSS_FILE);
    fs::write(&loss_path, csv).map_err(|e| Error::io(&loss_path, e))?;

    let ma = instance_field::moving_average(&outcome.losses, 500);
    let summary = TrainSummary {
        config: cfg.clone(),
        steps_taken: outcome.losses.len(),
        first_loss: outcome.losses.first().copied(),
        final_loss: outcome.losses.last().copied(),
        final_moving_average: ma.last().copied(),
        separation: instance_field::feature_separation(&outcome.scene),
    };
    let record = out.join(TRAIN_FILE);
    write_json(&record, &summary)?;
    write_timing(&record, elapsed)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapSummary {
    pub config: MapperConfig,
    pub pairs_total: usize,
    pub pairs_used: usize,
    pub final_loss: Option<f64>,
    /// Per-object cosine of the mean language feature to its vocabulary vector.
    pub fidelity: Option<Vec<(u32, f64)>>,
}

/// Fits the instance-to-language mapping, materializes the language field
/// and stores both in `out`.
pub fn cmd_map(scene_dir: &Path, out: &Path, cfg: &MapperConfig) -> Result<MapSummary> {
    let scene = load(scene_dir)?;
    if !scene.stage.trained {
        return Err(Error::StageOrder("map needs a trained instance field; run `train` first".into()));
    }
    let start = Instant::now();
    let pairs = ins2lang::build_training_pairs(&scene, cfg.min_pixels)?;
    let total = pairs.len();
    let mapping = match cfg.kind {
        MapperKind::Kernel => MappingFunction::Kernel(KernelMapping::new(pairs.subsample(cfg.max_pairs, cfg.seed), cfg.sigma)?),
        MapperKind::Mlp => {
            let mlp = ins2lang::MlpConfig {
                seed: cfg.seed,
                ..cfg.mlp.clone()
            };
            MappingFunction::Mlp(ins2lang::fit_mlp(&pairs, &mlp)?)
        }
    };
    let mapped = ins2lang::apply_mapping(&scene, &mapping)?;
    let elapsed = start.elapsed().as_secs_f64();
    create_dir(out)?;
    scene::save_scene(&mapped, out)?;
    ins2lang::save_mapping(&mapping, out)?;
    let summary = MapSummary {
        config: cfg.clone(),
        pairs_total: total,
        pairs_used: match &mapping {
            MappingFunction::Kernel(k) => k.pairs().len(),
            MappingFunction::Mlp(_) => total,
        },
        final_loss: match &mapping {
            MappingFunction::Mlp(m) => m.final_loss(),
            MappingFunction::Kernel(_) => None,
        },
        fidelity: ins2lang::vocabulary_fidelity(&mapped),
    };
    let record = out.join(MAP_FILE);
    write_json(&record, &summary)?;
    write_timing(&record, elapsed)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuerySource {
    /// Ground-truth vocabulary entry of a synthetic scene.
    ObjectId(u32),
    /// Raw little-endian `f32` file holding one `d_l` embedding.
    Vector(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRequest {
    pub source: QuerySource,
    /// Optional `k × d_l` file of canonical embeddings.
    pub canonical: Option<PathBuf>,
    pub inference: InferenceConfig,
}

fn unit_rows(data: &[f32], d: usize, what: &str) -> Result<Vec<Vec<f32>>> {
    if data.is_empty() || data.len() % d != 0 {
        return Err(Error::ShapeMismatch {
            field: what.into(),
            expected: d,
            found: data.len(),
        });
    }
    data.chunks(d)
        .map(|r| linalg::normalized(r).ok_or_else(|| Error::invalid(format!("zero vector in {what}"))))
        .collect()
}

/// Builds the query for `req` against `scene`.
pub fn resolve_query(scene: &GaussianScene, req: &QueryRequest) -> Result<Query> {
    let seed = req.inference.seed;
    let mut query = match &req.source {
        QuerySource::ObjectId(id) => inference::synthetic_query(scene, *id, seed)?,
        QuerySource::Vector(path) => {
            let raw = scene::read_f32_file(path, "query")?;
            if raw.len() != scene.d_l {
                return Err(Error::ShapeMismatch {
                    field: "query".into(),
                    expected: scene.d_l,
                    found: raw.len(),
                });
            }
            let embedding = match linalg::normalized(&raw) {
                Some(e) if !linalg::is_unit(&raw, 1e-5) => {
                    warn!("query embedding has norm {}; normalizing", linalg::norm(&raw));
                    e
                }
                Some(_) => raw,
                None => return Err(Error::invalid("query embedding is zero or non-finite")),
            };
            // Default canonicals: vocabulary entries unlike the query plus a
            // seeded random direction.
            let mut canonical: Vec<Vec<f32>> = scene
                .vocabulary
                .iter()
                .flat_map(|v| v.values())
                .filter(|v| linalg::cosine(v, &embedding) < 0.99)
                .cloned()
                .collect();
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
            let v: Vec<f32> = (0..scene.d_l)
                .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
                .collect();
            canonical.extend(linalg::normalized(&v));
            let mut q = Query::new(embedding, canonical);
            q.label = path.display().to_string();
            q
        }
    };
    if let Some(path) = &req.canonical {
        let raw = scene::read_f32_file(path, "canonical")?;
        query.canonical = unit_rows(&raw, scene.d_l, "canonical")?;
    }
    query.tau = req.inference.tau;
    query.threshold = req.inference.threshold;
    query.validate(scene.d_l)?;
    Ok(query)
}

#[derive(Serialize)]
struct RegionRecord {
    center: usize,
    size: usize,
    score: Option<f64>,
    accepted: bool,
}

#[derive(Serialize)]
struct QueryRecord<'a> {
    label: &'a str,
    tau: f64,
    threshold: SimilarityThreshold,
    threshold_used: f32,
    seed: u64,
    n_gaussians: usize,
    empty: bool,
    seeds: &'a [usize],
    regions: Vec<RegionRecord>,
    selected: &'a [usize],
}

/// Runs one query; writes `out_json` (plus its timing sidecar) and
/// optionally a PLY of the selection.
pub fn cmd_query(scene_dir: &Path, req: &QueryRequest, out_json: &Path, ply_out: Option<&Path>) -> Result<RefinementResult> {
    let scene = load(scene_dir)?;
    if scene.language.is_none() || scene.stage.mapped.is_none() {
        return Err(Error::StageOrder("query needs a language field; run `map` first".into()));
    }
    let query = resolve_query(&scene, req)?;
    let start = Instant::now();
    let result = inference::refine(&scene, &query)?;
    let elapsed = start.elapsed().as_secs_f64();
    let record = QueryRecord {
        label: &query.label,
        tau: query.tau,
        threshold: query.threshold,
        threshold_used: result.threshold,
        seed: req.inference.seed,
        n_gaussians: scene.len(),
        empty: result.selected.is_empty(),
        seeds: &result.seeds,
        regions: result
            .regions
            .iter()
            .map(|r| RegionRecord {
                center: r.center,
                size: r.members.len(),
                score: r.score,
                accepted: r.accepted,
            })
            .collect(),
        selected: &result.selected,
    };
    if let Some(parent) = out_json.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(out_json, &record)?;
    write_timing(out_json, elapsed)?;
    if let Some(path) = ply_out {
        ply::write_ply(path, &scene, Some(&result.selected), PlyFormat::Ascii)?;
    }
    Ok(result)
}

/// Runs the ablation benchmark and writes `report.json`, `report.txt` and
/// `report.timing.json` into `out`.
pub fn cmd_eval(
    scene_dir: &Path,
    cases_file: Option<&Path>,
    eval_cfg: &EvalConfig,
    inference_cfg: &InferenceConfig,
    out: &Path,
) -> Result<Vec<EvalReport>> {
    let scene = load(scene_dir)?;
    if scene.language.is_none() || scene.stage.mapped.is_none() {
        return Err(Error::StageOrder("eval needs a language field; run `map` first".into()));
    }
    if eval_cfg.modes.is_empty() {
        return Err(Error::Config("eval needs at least one mode".into()));
    }
    let bench = BenchmarkConfig {
        tau: inference_cfg.tau,
        threshold: inference_cfg.threshold,
        acc_threshold: eval_cfg.acc_threshold,
        clusters: eval_cfg.clusters,
        restarts: eval_cfg.restarts,
        seed: eval_cfg.seed,
        with_2d: eval_cfg.with_2d,
    };
    let cases = match cases_file {
        Some(path) => {
            let specs: Vec<CaseSpec> = read_json(path, "cases")?;
            specs.iter().map(|c| c.resolve(&scene, &bench)).collect::<Result<Vec<_>>>()?
        }
        None => eval::synthetic_cases(&scene, &bench)?,
    };
    if cases.is_empty() {
        return Err(Error::invalid("no evaluation cases"));
    }
    let reports = eval::run_benchmark(&scene, &cases, &eval_cfg.modes, &bench)?;
    create_dir(out)?;
    write_json(&out.join(REPORT_JSON), &json!({ "config": bench, "reports": reports }))?;
    let txt = out.join(REPORT_TXT);
    fs::write(&txt, eval::render_table(&reports, false)).map_err(|e| Error::io(&txt, e))?;
    let timing: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode,
                "mean_s": r.mean_runtime_s(),
                "per_query_s": r.per_query.iter().map(|q| q.runtime_s).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(&timing_path(&out.join(REPORT_JSON)), &timing)?;
    Ok(reports)
}
