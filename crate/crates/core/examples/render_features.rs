//! Renders color, instance and object-ID channels of a synthetic scene from
//! its first camera and writes them next to a summary.
//!
//! cargo run --release --example render_features -- [out_dir]

use std::path::PathBuf;

use splatseg::rasterizer::{render, ChannelSelector, RasterConfig, ViewRaster};
use splatseg::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> splatseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_out".into()));
    let scene = generate_synthetic_scene(&SceneSpec::default())?;
    let camera = &scene.views[0].camera;
    let cfg = RasterConfig::default();

    let color = render(&scene, camera, ChannelSelector::Color, &cfg)?;
    let covered = color.alpha.iter().filter(|&&a| a > 0.5).count();
    println!("{}x{} view, {covered} pixels with alpha > 0.5", color.width, color.height);

    let ids = render(&scene, camera, ChannelSelector::ObjectIdOneHot, &cfg)?;
    let densest = (0..color.alpha.len())
        .max_by(|&a, &b| color.alpha[a].total_cmp(&color.alpha[b]))
        .expect("non-empty image");
    let (x, y) = (densest as u32 % color.width, densest as u32 / color.width);
    println!("densest pixel ({x}, {y}): alpha {:.3}", color.alpha[densest]);
    println!("  rgb {:?}", color.pixel(x, y));
    println!("  object weights (background first) {:?}", ids.pixel(x, y));

    // The same projection can be reused for any per-Gaussian channel vector.
    let raster = ViewRaster::new(&scene, camera, &cfg);
    println!("{} splats in view, {} culled", raster.splats().len(), raster.culled);
    let instance = raster.forward(&scene.instance, scene.d_i)?;

    for (name, r) in [("color", &color), ("instance", &instance), ("object_ids", &ids)] {
        r.save(&out.join(name))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
