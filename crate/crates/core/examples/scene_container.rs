//! Saves a scene container, loads it back and exports a colored point cloud.
//!
//! cargo run --release --example scene_container -- [dir]

use std::path::PathBuf;

use splatseg::ply::{write_ply, PlyFormat};
use splatseg::scene::{generate_synthetic_scene, load_scene, save_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scene_out".into()));
    let scene = generate_synthetic_scene(&SceneSpec { background_gaussians: 50, ..SceneSpec::default() })?;
    save_scene(&scene, &dir)?;
    let back = load_scene(&dir)?;
    assert_eq!(back, scene, "round trip is lossless");
    println!("{} Gaussians, {} views round-tripped through {}", back.len(), back.views.len(), dir.display());

    let object = back.object_members(1);
    write_ply(&dir.join("object_1.ply"), &back, Some(&object), PlyFormat::Ascii)?;
    write_ply(&dir.join("all.ply"), &back, None, PlyFormat::BinaryLittleEndian)?;
    println!("wrote object_1.ply ({} points) and all.ply", object.len());
    Ok(())
}
