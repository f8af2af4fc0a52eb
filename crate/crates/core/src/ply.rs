//! Colored point export (`x y z red green blue`) for external viewers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::GaussianScene;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the Gaussians in `indices` (all of them when `None`) as points.
pub fn write_ply(path: &Path, scene: &GaussianScene, indices: Option<&[usize]>, format: PlyFormat) -> Result<()> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..scene.len()).collect();
            &all
        }
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= scene.len()) {
        return Err(Error::invalid(format!("point index {bad} out of range")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        indices.len()
    )
    .map_err(io)?;
    for &i in indices {
        let p = scene.positions[i];
        let c = scene.colors[i].map(to_u8);
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]).map_err(io)?,
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                w.write_all(&c).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
