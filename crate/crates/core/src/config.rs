//! Pipeline configuration file.
//!
//! A TOML document with optional `[scene]`, `[train]`, `[mapper]`,
//! `[inference]` and `[eval]` tables. Missing keys take their defaults;
//! unknown keys are rejected.
//!
//! ```toml
//! [train]
//! steps = 3000
//!
//! [mapper]
//! kind = "mlp"
//!
//! [inference]
//! tau = 0.5
//! threshold = "auto"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BenchmarkMode, DEFAULT_ACC_THRESHOLD, KMEANS_RESTARTS};
use crate::inference::{SimilarityThreshold, DEFAULT_TAU};
use crate::ins2lang::{MapperKind, MlpConfig, DEFAULT_MAX_PAIRS, DEFAULT_MIN_PIXELS, DEFAULT_SIGMA};
use crate::instance_field::TrainConfig;
use crate::scene::SceneSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub mapper: MapperConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    pub kind: MapperKind,
    pub sigma: f32,
    pub min_pixels: usize,
    /// Pair budget of the kernel mapping.
    pub max_pairs: usize,
    pub seed: u64,
    pub mlp: MlpConfig,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            kind: MapperKind::Kernel,
            sigma: DEFAULT_SIGMA,
            min_pixels: DEFAULT_MIN_PIXELS,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub tau: f64,
    pub threshold: SimilarityThreshold,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            tau: DEFAULT_TAU,
            threshold: SimilarityThreshold::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub modes: Vec<BenchmarkMode>,
    pub acc_threshold: f64,
    pub restarts: usize,
    pub clusters: Option<usize>,
    pub with_2d: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            modes: BenchmarkMode::ALL.to_vec(),
            acc_threshold: DEFAULT_ACC_THRESHOLD,
            restarts: KMEANS_RESTARTS,
            clusters: None,
            with_2d: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile {
                field: "config".into(),
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.scene.d_i, 16);
        assert_eq!(c.mapper.sigma, 0.1);
        assert_eq!(c.inference.tau, 0.5);
        assert_eq!(c.train.steps, 30_000);
    }

    #[test]
    fn partial_sections_override() {
        let c = PipelineConfig::from_toml(
            "[train]\nsteps = 300\n[mapper]\nkind = \"mlp\"\n[inference]\nthreshold = \"auto\"\n[eval]\nmodes = [\"collaborative\"]\n",
        )
        .unwrap();
        assert_eq!(c.train.steps, 300);
        assert_eq!(c.train.learning_rate, 2.5e-3);
        assert_eq!(c.mapper.kind, MapperKind::Mlp);
        assert_eq!(c.inference.threshold, SimilarityThreshold::Auto);
        assert_eq!(c.eval.modes, vec![BenchmarkMode::Collaborative]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("[train]\nstep = 3\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[render]\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[train]\nsteps = \"many\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.inference.threshold = SimilarityThreshold::Fixed(0.7);
        c.eval.clusters = Some(5);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
