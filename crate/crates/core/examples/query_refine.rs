//! Queries one object of a fully processed synthetic scene and prints the
//! refinement trace, with the fixed and the automatic similarity threshold.
//!
//! cargo run --release --example query_refine -- [object_id]

use splatseg::eval::iou_3d;
use splatseg::inference::{refine, synthetic_query, SimilarityThreshold};
use splatseg::ins2lang::{apply_mapping, build_training_pairs, KernelMapping, MappingFunction, DEFAULT_MIN_PIXELS, DEFAULT_SIGMA};
use splatseg::instance_field::{train_instance_field, TrainConfig};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let id = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scene = generate_synthetic_scene(&SceneSpec::default())?;
    let trained = train_instance_field(&scene, &TrainConfig::fast())?.scene;
    let pairs = build_training_pairs(&trained, DEFAULT_MIN_PIXELS)?;
    let scene = apply_mapping(&trained, &MappingFunction::Kernel(KernelMapping::new(pairs, DEFAULT_SIGMA)?))?;
    let gt = scene.object_members(id);

    for threshold in [SimilarityThreshold::Fixed(0.8), SimilarityThreshold::Auto] {
        let mut query = synthetic_query(&scene, id, 0)?;
        query.threshold = threshold;
        let result = refine(&scene, &query)?;
        println!("T = {threshold} (used {:.3}): {} seeds", result.threshold, result.seeds.len());
        for r in &result.regions {
            let score = r.score.map_or("-".to_string(), |s| format!("{s:.3}"));
            let verdict = if r.accepted { "accept" } else { "reject" };
            println!("  center {:>4}  size {:>4}  score {score}  {verdict}", r.center, r.members.len());
        }
        println!("  IoU vs object {id}: {:.4}", iou_3d(&result.selected, &gt)?);
    }
    Ok(())
}
