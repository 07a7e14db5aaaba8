//! Template/search training pairs and the JSONL manifest that hands them to
//! training code.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed6;
use crate::geometry::{AffineMap, BoundingBox};
use crate::imaging::{warp_affine, ImageBuffer};
use crate::seed;
use crate::synthesis::SynthesizedSample;
use crate::transforms::TransformParams;

/// Crop sizes and context factors for a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub template_size: usize,
    pub search_size: usize,
    pub template_context: f64,
    pub search_context: f64,
}

impl Default for PairGeometry {
    fn default() -> Self {
        PairGeometry { template_size: 127, search_size: 255, template_context: 2.0, search_context: 4.0 }
    }
}

impl PairGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.template_size == 0 || self.template_size >= self.search_size {
            return Err(Error::Config(format!(
                "template size {} must be positive and below search size {}",
                self.template_size, self.search_size
            )));
        }
        if !(self.template_context >= 1.0 && self.search_context >= 1.0) {
            return Err(Error::Config("context factors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Square crop around a box, resized to `out` pixels: `p ↦ (p - origin) · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropMap {
    pub origin: (f64, f64),
    pub scale: f64,
    pub out: usize,
}

impl CropMap {
    pub fn around(bbox: &BoundingBox, context: f64, out: usize) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::InvalidBox(format!("{bbox:?}")));
        }
        let side = context * bbox.w.max(bbox.h);
        let (cx, cy) = bbox.center();
        Ok(CropMap { origin: (cx - side / 2.0, cy - side / 2.0), scale: out as f64 / side, out })
    }

    pub fn affine(&self) -> AffineMap {
        AffineMap::translation(-self.origin.0, -self.origin.1).then(&AffineMap::scale(self.scale, self.scale))
    }

    pub fn forward(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x: (b.x - self.origin.0) * self.scale,
            y: (b.y - self.origin.1) * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
        }
    }

    pub fn inverse(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x: b.x / self.scale + self.origin.0,
            y: b.y / self.scale + self.origin.1,
            w: b.w / self.scale,
            h: b.h / self.scale,
        }
    }

    /// Samples the crop from `img`; outside parts replicate the frame edge.
    pub fn crop(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        warp_affine(img, &self.affine().to_pixel_index(), self.out, self.out)
    }
}

/// One template/search pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub template: ImageBuffer,
    pub search: ImageBuffer,
    pub target_in_search: BoundingBox,
    pub template_source: String,
    pub search_source: String,
    pub seed: u64,
}

pub fn make_pair(
    a: &SynthesizedSample,
    b: &SynthesizedSample,
    geom: &PairGeometry,
    seed: u64,
) -> Result<TrainingPair> {
    geom.validate()?;
    let tmap = CropMap::around(&a.bbox, geom.template_context, geom.template_size)?;
    let smap = CropMap::around(&b.bbox, geom.search_context, geom.search_size)?;
    Ok(TrainingPair {
        template: tmap.crop(&a.image)?,
        search: smap.crop(&b.image)?,
        target_in_search: smap.forward(&b.bbox),
        template_source: a.id.clone(),
        search_source: b.id.clone(),
        seed,
    })
}

/// Uniform with-replacement `(template, search)` index pairs.
pub fn sample_pair_indices(n_samples: usize, n_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n_samples == 0 {
        return Err(Error::Empty("no samples to pair".into()));
    }
    let mut rng = seed::rng(seed);
    Ok((0..n_pairs)
        .map(|_| (rng.random_range(0..n_samples), rng.random_range(0..n_samples)))
        .collect())
}

pub fn sample_pairs(
    samples: &[SynthesizedSample],
    n_pairs: usize,
    seed: u64,
    geom: &PairGeometry,
) -> Result<Vec<TrainingPair>> {
    let idx = sample_pair_indices(samples.len(), n_pairs, seed)?;
    idx.into_par_iter()
        .enumerate()
        .map(|(k, (t, s))| make_pair(&samples[t], &samples[s], geom, seed::mix64(&[seed, k as u64])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub frame_path: String,
    #[serde(rename = "box", serialize_with = "fixed6::serialize_slice")]
    pub bbox: [f64; 4],
    pub background: (String, usize),
    pub chain: Vec<TransformParams>,
    #[serde(serialize_with = "fixed6::serialize_nested")]
    pub distractors: Vec<[f64; 4]>,
    pub seed: u64,
}

impl SampleRecord {
    pub fn new(sample: &SynthesizedSample, frame_path: impl Into<String>) -> Self {
        SampleRecord {
            id: sample.id.clone(),
            frame_path: frame_path.into(),
            bbox: sample.bbox.as_array(),
            background: sample.background.clone(),
            chain: sample.chain.steps.clone(),
            distractors: sample.distractor_boxes.iter().map(BoundingBox::as_array).collect(),
            seed: sample.seed,
        }
    }

    pub fn bbox(&self) -> Result<BoundingBox> {
        let [x, y, w, h] = self.bbox;
        BoundingBox::new(x, y, w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub template_id: String,
    pub search_id: String,
    #[serde(serialize_with = "fixed6::serialize_slice")]
    pub target_in_search: [f64; 4],
    pub seed: u64,
    /// Materialized crops, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_path: Option<String>,
}

impl PairRecord {
    pub fn new(pair: &TrainingPair) -> Self {
        PairRecord {
            template_id: pair.template_source.clone(),
            search_id: pair.search_source.clone(),
            target_in_search: pair.target_in_search.as_array(),
            seed: pair.seed,
            template_path: None,
            search_path: None,
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestRecord {
    Sample(SampleRecord),
    Pair(PairRecord),
}

/// Writes one JSON object per line and returns the number of lines.
pub fn export_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
