//! Mapping serialization inside a scene container (`<scene>/mapping/`).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{KernelMapping, MappingFunction, MappingPairSet, MlpMapping};
use crate::error::{Error, Result};
use crate::scene::{read_f32_file, write_f32_file};

pub const MAPPING_DIR: &str = "mapping";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MappingManifest {
    Kernel {
        sigma: f32,
        m: usize,
        d_i: usize,
        d_l: usize,
        /// `(view_index, segment_id)` per pair.
        sources: Vec<(usize, u32)>,
    },
    Mlp {
        widths: Vec<usize>,
        activation: String,
        final_loss: Option<f64>,
        /// Weight and bias file names per layer.
        layers: Vec<(String, String)>,
    },
}

pub fn save_mapping(mapping: &MappingFunction, scene_dir: &Path) -> Result<()> {
    let dir = scene_dir.join(MAPPING_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = match mapping {
        MappingFunction::Kernel(k) => {
            let p = k.pairs();
            write_f32_file(&dir.join("pairs_instance.f32"), &p.instance)?;
            write_f32_file(&dir.join("pairs_language.f32"), &p.language)?;
            MappingManifest::Kernel {
                sigma: k.sigma(),
                m: p.len(),
                d_i: p.d_i,
                d_l: p.d_l,
                sources: p.sources.clone(),
            }
        }
        MappingFunction::Mlp(net) => {
            let mut layers = Vec::new();
            for (k, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
                let (wf, bf) = (format!("w{k}.f32"), format!("b{k}.f32"));
                write_f32_file(&dir.join(&wf), &w.iter().copied().collect::<Vec<_>>())?;
                write_f32_file(&dir.join(&bf), &b.to_vec())?;
                layers.push((wf, bf));
            }
            MappingManifest::Mlp {
                widths: net.widths().to_vec(),
                activation: super::mlp::ACTIVATION.into(),
                final_loss: net.final_loss(),
                layers,
            }
        }
    };
    let path = dir.join("mapping.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load_mapping(scene_dir: &Path) -> Result<MappingFunction> {
    let dir = scene_dir.join(MAPPING_DIR);
    let path = dir.join("mapping.json");
    if !path.exists() {
        return Err(Error::MissingFile {
            field: "mapping".into(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: MappingManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    match manifest {
        MappingManifest::Kernel {
            sigma,
            m,
            d_i,
            d_l,
            sources,
        } => {
            let instance = read_f32_file(&dir.join("pairs_instance.f32"), "pairs_instance")?;
            let language = read_f32_file(&dir.join("pairs_language.f32"), "pairs_language")?;
            for (field, len, cols) in [("pairs_instance", instance.len(), d_i), ("pairs_language", language.len(), d_l)] {
                if len != m * cols {
                    return Err(Error::ShapeMismatch {
                        field: field.into(),
                        expected: m,
                        found: len / cols.max(1),
                    });
                }
            }
            if sources.len() != m {
                return Err(Error::ShapeMismatch {
                    field: "sources".into(),
                    expected: m,
                    found: sources.len(),
                });
            }
            let pairs = MappingPairSet {
                d_i,
                d_l,
                instance,
                language,
                sources,
            };
            Ok(MappingFunction::Kernel(KernelMapping::new(pairs, sigma)?))
        }
        MappingManifest::Mlp {
            widths,
            activation,
            final_loss,
            layers,
        } => {
            if activation != super::mlp::ACTIVATION {
                return Err(Error::invalid(format!("unsupported activation `{activation}`")));
            }
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for (k, (wf, bf)) in layers.iter().enumerate() {
                let (rows, cols) = (
                    *widths.get(k).ok_or_else(|| Error::invalid("mlp widths too short"))?,
                    *widths.get(k + 1).ok_or_else(|| Error::invalid("mlp widths too short"))?,
                );
                let w = read_f32_file(&dir.join(wf), wf)?;
                let b = read_f32_file(&dir.join(bf), bf)?;
                let found = w.len();
                weights.push(Array2::from_shape_vec((rows, cols), w).map_err(|_| Error::ShapeMismatch {
                    field: wf.clone(),
                    expected: rows * cols,
                    found,
                })?);
                biases.push(Array1::from_vec(b));
            }
            let mut net = MlpMapping::from_parts(widths, weights, biases)?;
            net.losses = final_loss.into_iter().collect();
            Ok(MappingFunction::Mlp(net))
        }
    }
}
