//! Directory container: `manifest.json` plus raw little-endian tensor files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camera, GaussianScene, StageMarkers, ViewSupervision};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n_gaussians: usize,
    d_i: usize,
    d_l: usize,
    /// File name → shape.
    tensors: BTreeMap<String, Vec<usize>>,
    views: Vec<ViewEntry>,
    vocabulary: Option<BTreeMap<u32, Vec<f32>>>,
    trained: bool,
    mapped: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViewEntry {
    camera: Camera,
    mask: String,
    segments: String,
    #[serde(default)]
    language_free: Vec<u32>,
}

pub fn write_f32_file(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_u32_file(path: &Path, data: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path, field: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            field: field.into(),
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(format!(
            "`{field}`: file size {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Reads a raw little-endian `f32` file, rejecting non-finite values.
pub fn read_f32_file(path: &Path, field: &str) -> Result<Vec<f32>> {
    let bytes = read_bytes(path, field)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: field.into(),
            index,
        });
    }
    Ok(data)
}

fn read_u32_file(path: &Path, field: &str) -> Result<Vec<u32>> {
    let bytes = read_bytes(path, field)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, field: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile {
            field: field.into(),
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("container types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `scene` into directory `dir`, creating it if needed.
pub fn save_scene(scene: &GaussianScene, dir: &Path) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = scene.len();
    let mut tensors = BTreeMap::new();
    let mut put = |name: &str, data: Vec<f32>, cols: usize| -> Result<()> {
        write_f32_file(&dir.join(name), &data)?;
        tensors.insert(name.to_string(), vec![n, cols]);
        Ok(())
    };
    put("positions.f32", scene.positions.iter().flatten().copied().collect(), 3)?;
    put("scales.f32", scene.scales.iter().flatten().copied().collect(), 3)?;
    put("rotations.f32", scene.rotations.iter().flatten().copied().collect(), 4)?;
    put("opacities.f32", scene.opacities.clone(), 1)?;
    put("colors.f32", scene.colors.iter().flatten().copied().collect(), 3)?;
    put("instance.f32", scene.instance.clone(), scene.d_i)?;
    match &scene.language {
        Some(l) => put("language.f32", l.clone(), scene.d_l)?,
        None => remove_stale(&dir.join("language.f32"))?,
    }
    match &scene.object_ids {
        Some(ids) => {
            write_u32_file(&dir.join("object_ids.u32"), ids)?;
            tensors.insert("object_ids.u32".into(), vec![n, 1]);
        }
        None => remove_stale(&dir.join("object_ids.u32"))?,
    }

    let mut views = Vec::with_capacity(scene.views.len());
    for (k, view) in scene.views.iter().enumerate() {
        let mask = format!("mask_{k}.u32");
        let segments = format!("segments_{k}.json");
        write_u32_file(&dir.join(&mask), &view.instance_mask)?;
        write_json(&dir.join(&segments), &view.segment_language)?;
        tensors.insert(mask.clone(), vec![view.camera.height as usize, view.camera.width as usize]);
        views.push(ViewEntry {
            camera: view.camera.clone(),
            mask,
            segments,
            language_free: view.language_free.iter().copied().collect(),
        });
    }

    let manifest = Manifest {
        version: VERSION,
        n_gaussians: n,
        d_i: scene.d_i,
        d_l: scene.d_l,
        tensors,
        views,
        vocabulary: scene.vocabulary.clone(),
        trained: scene.stage.trained,
        mapped: scene.stage.mapped.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn remove_stale(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn rows_of<const K: usize>(data: Vec<f32>, field: &str, n: usize) -> Result<Vec<[f32; K]>> {
    check_rows(field, data.len(), K, n)?;
    Ok(data
        .chunks_exact(K)
        .map(|c| std::array::from_fn(|k| c[k]))
        .collect())
}

fn check_rows(field: &str, len: usize, cols: usize, n: usize) -> Result<()> {
    if len % cols != 0 || len / cols != n {
        return Err(Error::ShapeMismatch {
            field: field.into(),
            expected: n,
            found: len / cols,
        });
    }
    Ok(())
}

/// Loads a scene directory written by [`save_scene`].
pub fn load_scene(dir: &Path) -> Result<GaussianScene> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE), "manifest")?;
    if manifest.version != VERSION {
        return Err(Error::invalid(format!("unsupported container version {}", manifest.version)));
    }
    let n = manifest.n_gaussians;
    let (d_i, d_l) = (manifest.d_i, manifest.d_l);
    for (name, cols) in [
        ("positions.f32", 3),
        ("scales.f32", 3),
        ("rotations.f32", 4),
        ("opacities.f32", 1),
        ("colors.f32", 3),
        ("instance.f32", d_i),
    ] {
        let shape = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("manifest lacks tensor `{name}`")))?;
        if shape != &vec![n, cols] {
            return Err(Error::invalid(format!("manifest shape {shape:?} for `{name}` disagrees with n={n}, cols={cols}")));
        }
    }
    let field = |name: &str| name.trim_end_matches(".f32").trim_end_matches(".u32").to_string();
    let load = |name: &str| read_f32_file(&dir.join(name), &field(name));

    let positions = rows_of::<3>(load("positions.f32")?, "positions", n)?;
    let scales = rows_of::<3>(load("scales.f32")?, "scales", n)?;
    let rotations = rows_of::<4>(load("rotations.f32")?, "rotations", n)?;
    let opacities = load("opacities.f32")?;
    check_rows("opacities", opacities.len(), 1, n)?;
    let colors = rows_of::<3>(load("colors.f32")?, "colors", n)?;
    let instance = load("instance.f32")?;
    check_rows("instance", instance.len(), d_i, n)?;
    let language = if manifest.tensors.contains_key("language.f32") {
        let l = load("language.f32")?;
        check_rows("language", l.len(), d_l, n)?;
        Some(l)
    } else {
        None
    };
    let object_ids = if manifest.tensors.contains_key("object_ids.u32") {
        let ids = read_u32_file(&dir.join("object_ids.u32"), "object_ids")?;
        check_rows("object_ids", ids.len(), 1, n)?;
        Some(ids)
    } else {
        None
    };

    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in manifest.views {
        let expected = entry.camera.pixel_count();
        let field_name = field(&entry.mask);
        let instance_mask = read_u32_file(&dir.join(&entry.mask), &field_name)?;
        if instance_mask.len() != expected {
            return Err(Error::ShapeMismatch {
                field: field_name,
                expected,
                found: instance_mask.len(),
            });
        }
        let segment_language: BTreeMap<u32, Vec<f32>> =
            read_json(&dir.join(&entry.segments), &entry.segments)?;
        for (id, v) in &segment_language {
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    field: format!("{}[{id}]", entry.segments),
                    index,
                });
            }
        }
        views.push(ViewSupervision {
            camera: entry.camera,
            instance_mask,
            segment_language,
            language_free: entry.language_free.into_iter().collect::<BTreeSet<_>>(),
        });
    }

    let scene = GaussianScene {
        d_i,
        d_l,
        positions,
        scales,
        rotations,
        opacities,
        colors,
        instance,
        language,
        object_ids,
        views,
        vocabulary: manifest.vocabulary,
        stage: StageMarkers {
            trained: manifest.trained,
            mapped: manifest.mapped,
        },
    };
    scene.validate()?;
    Ok(scene)
}
