//! Instance-only clustering vs language-only thresholding vs collaborative
//! refinement over several scene seeds.
//!
//! `language_noise` perturbs every view's segment embedding, standing in for
//! the view-dependent error of a real image encoder.
//!
//! cargo run --release --example ablation_benchmark -- [seeds] [language_noise]

use splatseg::eval::{render_table, run_benchmark, synthetic_cases, BenchmarkConfig, BenchmarkMode};
use splatseg::ins2lang::{apply_mapping, build_training_pairs, KernelMapping, MappingFunction, DEFAULT_MIN_PIXELS, DEFAULT_SIGMA};
use splatseg::instance_field::{train_instance_field, TrainConfig};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let noise: f32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);

    for seed in 0..seeds {
        let spec = SceneSpec { seed, language_noise: noise, ..SceneSpec::default() };
        let scene = generate_synthetic_scene(&spec)?;
        let trained = train_instance_field(&scene, &TrainConfig { seed, ..TrainConfig::fast() })?.scene;
        let pairs = build_training_pairs(&trained, DEFAULT_MIN_PIXELS)?;
        let mapped = apply_mapping(&trained, &MappingFunction::Kernel(KernelMapping::new(pairs, DEFAULT_SIGMA)?))?;

        let cfg = BenchmarkConfig { seed, with_2d: true, ..BenchmarkConfig::default() };
        let cases = synthetic_cases(&mapped, &cfg)?;
        let reports = run_benchmark(&mapped, &cases, &BenchmarkMode::ALL, &cfg)?;
        println!("seed {seed}, language noise {noise}:");
        print!("{}", render_table(&reports, true));
        println!();
    }
    Ok(())
}
