//! Procedural OTB-style sequences for demos and tests: a smooth textured
//! background with a striped object drifting across it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::imaging::{quantize, ImageBuffer};
use crate::otb;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub object: (f64, f64),
    pub attributes: Vec<String>,
}

impl Default for ToyScene {
    fn default() -> Self {
        ToyScene { width: 160, height: 120, frames: 8, object: (32.0, 24.0), attributes: Vec::new() }
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Background texture as a function, so frames differ only by a small pan.
fn texture(seed_v: u64) -> impl Fn(f64, f64) -> [f64; 3] {
    let mut rng = seed::rng(seed_v);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(70.0..150.0));
    let waves: Vec<Wave> = (0..6)
        .map(|_| Wave {
            fx: rng.random_range(-0.12..0.12),
            fy: rng.random_range(-0.12..0.12),
            phase: rng.random_range(0.0..2.0 * PI),
            amp: std::array::from_fn(|_| rng.random_range(5.0..25.0)),
        })
        .collect();
    move |x, y| {
        let mut c = base;
        for w in &waves {
            let s = (w.fx * x + w.fy * y + w.phase).sin();
            for (ch, a) in c.iter_mut().zip(w.amp) {
                *ch += a * s;
            }
        }
        c
    }
}

/// Object appearance in object-local coordinates: saturated color blobs
/// over a dark base.
fn object_texture(seed_v: u64, w: f64, h: f64) -> impl Fn(f64, f64) -> [f64; 3] {
    let mut rng = seed::rng(seed::mix64(&[seed_v, 0x00b1_ec70]));
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..12)
        .map(|_| {
            let color = match rng.random_range(0..4) {
                0 => [240.0, 40.0, 30.0],
                1 => [250.0, 220.0, 40.0],
                2 => [30.0, 200.0, 240.0],
                _ => [245.0, 245.0, 245.0],
            };
            (rng.random_range(0.0..w), rng.random_range(0.0..h), rng.random_range(2.5..6.0), color)
        })
        .collect();
    move |x, y| {
        let mut c = [40.0, 30.0, 60.0];
        for &(bx, by, r, col) in &blobs {
            let g = (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * r * r)).exp();
            for (ch, v) in c.iter_mut().zip(col) {
                *ch += g * (v - *ch);
            }
        }
        c
    }
}

/// Box of the object in frame `t`.
pub fn object_box(scene: &ToyScene, t: usize) -> BoundingBox {
    let (w, h) = scene.object;
    let u = if scene.frames > 1 { t as f64 / (scene.frames - 1) as f64 } else { 0.0 };
    let cx = scene.width as f64 * (0.3 + 0.4 * u);
    let cy = scene.height as f64 * (0.5 + 0.15 * (2.0 * PI * u).sin());
    BoundingBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
}

/// Renders frame `t` of a sequence.
pub fn render_frame(scene: &ToyScene, seq_seed: u64, t: usize) -> ImageBuffer {
    let tex = texture(seq_seed);
    let b = object_box(scene, t);
    let obj = object_texture(seq_seed, b.w, b.h);
    let mut noise = seed::rng(seed::mix64(&[seq_seed, t as u64]));
    let pan = t as f64 * 0.5;
    ImageBuffer::from_fn(scene.width, scene.height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let n = noise.random_range(-4.0..4.0);
        let inside = px >= b.x && px < b.right() && py >= b.y && py < b.bottom();
        if inside {
            obj(px - b.x, py - b.y).map(|v| quantize(v + n))
        } else {
            tex(px + pan, py).map(|v| quantize(v + n))
        }
    })
}

/// Writes `names.len()` sequences under `root` with ground truth on every
/// frame. Returns the sequence directories.
pub fn write_dataset(root: &Path, names: &[&str], scene: &ToyScene, seed_v: u64) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for name in names {
        let dir = root.join(name);
        let img_dir = dir.join(otb::IMAGE_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let seq_seed = seed::mix64(&[seed_v, seed::hash_str(name)]);
        let mut boxes = Vec::with_capacity(scene.frames);
        for t in 0..scene.frames {
            render_frame(scene, seq_seed, t).save(img_dir.join(otb::frame_file_name(t)))?;
            boxes.push(object_box(scene, t));
        }
        otb::write_boxes(dir.join(otb::GROUNDTRUTH_FILE), &boxes)?;
        if !scene.attributes.is_empty() {
            let p = dir.join(otb::ATTRIBUTES_FILE);
            fs::write(&p, scene.attributes.join(",") + "\n").map_err(|e| Error::io(&p, e))?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}
