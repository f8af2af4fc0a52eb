//! Builds segment-level training pairs from a trained instance field and
//! materializes the language field with kernel regression (no training).
//!
//! cargo run --release --example kernel_mapping -- [sigma]

use splatseg::ins2lang::{
    apply_mapping, build_training_pairs, vocabulary_fidelity, KernelMapping, MappingFunction, DEFAULT_MIN_PIXELS,
    DEFAULT_SIGMA,
};
use splatseg::instance_field::{train_instance_field, TrainConfig};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let sigma = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SIGMA);
    let scene = generate_synthetic_scene(&SceneSpec::default())?;
    let trained = train_instance_field(&scene, &TrainConfig::fast())?.scene;

    let pairs = build_training_pairs(&trained, DEFAULT_MIN_PIXELS)?;
    println!("{} pairs from {} views", pairs.len(), trained.views.len());

    let mapping = MappingFunction::Kernel(KernelMapping::new(pairs, sigma)?);
    let mapped = apply_mapping(&trained, &mapping)?;
    println!("sigma = {sigma}");
    for (id, cos) in vocabulary_fidelity(&mapped).expect("vocabulary and language present") {
        println!("  object {id}: mean language cosine to vocabulary {cos:.4}");
    }
    Ok(())
}
