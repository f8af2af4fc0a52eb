//! Queries with an embedding from an arbitrary encoder. Here a "crop
//! embedding" is simulated as a scaled, perturbed vocabulary vector; it is
//! not unit length, so it is normalized before use.
//!
//! cargo run --release --example image_query -- [object_id] [noise]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use splatseg::eval::iou_3d;
use splatseg::inference::{query_by_embedding, synthetic_canonicals, QueryOptions, SimilarityThreshold};
use splatseg::ins2lang::{apply_mapping, build_training_pairs, KernelMapping, MappingFunction, DEFAULT_MIN_PIXELS, DEFAULT_SIGMA};
use splatseg::instance_field::{train_instance_field, TrainConfig};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let noise: f32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);

    let scene = generate_synthetic_scene(&SceneSpec::default())?;
    let trained = train_instance_field(&scene, &TrainConfig::fast())?.scene;
    let pairs = build_training_pairs(&trained, DEFAULT_MIN_PIXELS)?;
    let scene = apply_mapping(&trained, &MappingFunction::Kernel(KernelMapping::new(pairs, DEFAULT_SIGMA)?))?;

    let target = &scene.vocabulary.as_ref().expect("synthetic vocabulary")[&id];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let embedding: Vec<f32> = target
        .iter()
        .map(|&v| 3.0 * (v + noise * rng.sample::<f32, _>(StandardNormal) / (target.len() as f32).sqrt()))
        .collect();

    let options = QueryOptions {
        canonical: synthetic_canonicals(&scene, id, 0)?,
        tau: 0.5,
        threshold: SimilarityThreshold::Fixed(0.8),
        label: format!("image of object {id}"),
    };
    let result = query_by_embedding(&scene, &embedding, &options)?;
    println!(
        "{}: {} Gaussians selected, IoU {:.4}",
        options.label,
        result.selected.len(),
        iou_3d(&result.selected, &scene.object_members(id))?
    );
    Ok(())
}
