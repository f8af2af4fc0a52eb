//! Fits the shallow MLP mapping on segment pairs and compares its fidelity
//! with the kernel regressor on the same pairs.
//!
//! cargo run --release --example mlp_mapping -- [steps]

use std::time::Instant;

use splatseg::ins2lang::{
    apply_mapping, build_training_pairs, fit_mlp, vocabulary_fidelity, KernelMapping, MappingFunction, MlpConfig,
    DEFAULT_MIN_PIXELS, DEFAULT_SIGMA,
};
use splatseg::instance_field::{train_instance_field, TrainConfig};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn min_fidelity(scene: &splatseg::GaussianScene) -> f64 {
    vocabulary_fidelity(scene)
        .expect("vocabulary and language present")
        .iter()
        .map(|&(_, c)| c)
        .fold(f64::INFINITY, f64::min)
}

fn main() -> splatseg::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let scene = generate_synthetic_scene(&SceneSpec::default())?;
    let trained = train_instance_field(&scene, &TrainConfig::fast())?.scene;
    let pairs = build_training_pairs(&trained, DEFAULT_MIN_PIXELS)?;

    let start = Instant::now();
    let net = fit_mlp(&pairs, &MlpConfig { steps, ..MlpConfig::default() })?;
    println!("mlp {:?}: {steps} steps in {:.2?}", net.widths(), start.elapsed());
    for k in (0..net.losses.len()).step_by((net.losses.len() / 5).max(1)) {
        println!("  step {k:>6}  L1 {:.5}", net.losses[k]);
    }

    let mlp = apply_mapping(&trained, &MappingFunction::Mlp(net))?;
    let kernel = apply_mapping(&trained, &MappingFunction::Kernel(KernelMapping::new(pairs, DEFAULT_SIGMA)?))?;
    println!("worst-object vocabulary cosine: mlp {:.4}, kernel {:.4}", min_fidelity(&mlp), min_fidelity(&kernel));
    Ok(())
}
