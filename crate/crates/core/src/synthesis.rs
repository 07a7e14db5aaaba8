//! Crop-transform-paste: cut the annotated target out of its reference
//! frame, push it through a sampled transform chain, and paste it onto a
//! background frame with a soft pad blend. The pasted box is known exactly,
//! so every synthesized frame carries its own ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::debug;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::imaging::{color_histogram, composite, crop_with_pad, feature_distance, AlphaMask, ImageBuffer};
use crate::otb;
use crate::seed;
use crate::transforms::{apply_chain, sample_chain, SchedulePolicy, TransformChain};

/// Maximum IoU a distractor may have with the target box.
pub const DISTRACTOR_MAX_IOU: f64 = 0.2;
/// Placement attempts per distractor before it is skipped.
pub const DISTRACTOR_ATTEMPTS: usize = 50;
/// Chains tried per sample before falling back to an untransformed paste.
const CHAIN_ATTEMPTS: usize = 8;
const MIN_PAD: usize = 2;
const RANDOM_CROP_MIN: usize = 32;
const RANDOM_CROP_MAX: usize = 128;
const RANDOM_CROP_TAG: u64 = 0x7261_6e64_6372_6f70;
const LIBRARY_TAG: u64 = 0x6c69_6272_6172_7921;

/// One frame of a sequence. The image is decoded on first access.
#[derive(Debug, Clone)]
pub struct Frame {
    pub sequence_id: String,
    pub index: usize,
    pub source_path: PathBuf,
    image: OnceLock<ImageBuffer>,
}

impl Frame {
    pub fn from_path(sequence_id: impl Into<String>, index: usize, path: impl Into<PathBuf>) -> Self {
        Frame {
            sequence_id: sequence_id.into(),
            index,
            source_path: path.into(),
            image: OnceLock::new(),
        }
    }

    pub fn from_image(sequence_id: impl Into<String>, index: usize, image: ImageBuffer) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(image);
        Frame {
            sequence_id: sequence_id.into(),
            index,
            source_path: PathBuf::new(),
            image: cell,
        }
    }

    pub fn image(&self) -> Result<&ImageBuffer> {
        if let Some(img) = self.image.get() {
            return Ok(img);
        }
        let img = ImageBuffer::open(&self.source_path)?;
        Ok(self.image.get_or_init(|| img))
    }
}

/// Where the reference box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxSource {
    /// First line of `groundtruth_rect.txt`.
    Annotated,
    /// First line of a `detector_rect.txt` sidecar written by an external detector.
    ExternalDetector,
    /// A random box on the first frame.
    RandomCrop,
}

impl BoxSource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "annotated" => Some(BoxSource::Annotated),
            "detector" | "external_detector" => Some(BoxSource::ExternalDetector),
            "random" | "random_crop" => Some(BoxSource::RandomCrop),
            _ => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            BoxSource::Annotated => "annotated",
            BoxSource::ExternalDetector => "detector",
            BoxSource::RandomCrop => "random",
        }
    }
}

/// The single annotated frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceAnnotation {
    pub sequence_id: String,
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub source: BoxSource,
}

impl ReferenceAnnotation {
    pub fn id(&self) -> String {
        format!("{}:{}", self.sequence_id, self.frame_index)
    }
}

/// Target pixels with a pad ring. `inner_box` is in patch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPatch {
    pub image: ImageBuffer,
    pub inner_box: BoundingBox,
    pub pad: usize,
    pub provenance: String,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Frame>,
    pub attributes: Vec<String>,
}

/// Sequences plus one reference annotation per sequence.
#[derive(Debug, Clone, Default)]
pub struct SequenceDataset {
    pub sequences: BTreeMap<String, Sequence>,
    pub annotations: BTreeMap<String, ReferenceAnnotation>,
}

impl SequenceDataset {
    /// Loads every sequence under `root`. `seed` only matters for
    /// [`BoxSource::RandomCrop`].
    pub fn load(root: impl AsRef<Path>, source: BoxSource, seed: u64) -> Result<Self> {
        let mut ds = SequenceDataset::default();
        for (id, dir) in otb::list_sequences(root)? {
            let frames: Vec<Frame> = otb::list_frames(&dir)?
                .into_iter()
                .enumerate()
                .map(|(i, p)| Frame::from_path(&id, i, p))
                .collect();
            if frames.is_empty() {
                continue;
            }
            let bbox = match source {
                BoxSource::Annotated => otb::read_first_box(dir.join(otb::GROUNDTRUTH_FILE))?,
                BoxSource::ExternalDetector => otb::read_first_box(dir.join(otb::DETECTOR_FILE))?,
                BoxSource::RandomCrop => {
                    let img = frames[0].image()?;
                    let mut rng = seed::rng(seed::mix64(&[seed, seed::hash_str(&id), RANDOM_CROP_TAG]));
                    random_crop_box(img.width(), img.height(), &mut rng)
                }
            };
            let attributes = otb::read_attributes(&dir)?;
            ds.insert(Sequence { id: id.clone(), frames, attributes }, bbox, source)?;
        }
        Ok(ds)
    }

    /// Adds a sequence annotated on its first frame.
    pub fn insert(&mut self, sequence: Sequence, bbox: BoundingBox, source: BoxSource) -> Result<()> {
        let first = sequence
            .frames
            .first()
            .ok_or_else(|| Error::Empty(format!("sequence {:?} has no frames", sequence.id)))?;
        let img = first.image()?;
        if crate::geometry::clamp_box(&bbox, img.width() as f64, img.height() as f64).is_none() {
            return Err(Error::BoxOutsideFrame);
        }
        self.annotations.insert(
            sequence.id.clone(),
            ReferenceAnnotation {
                sequence_id: sequence.id.clone(),
                frame_index: first.index,
                bbox,
                source,
            },
        );
        self.sequences.insert(sequence.id.clone(), sequence);
        Ok(())
    }

    pub fn sequence(&self, id: &str) -> Result<&Sequence> {
        self.sequences.get(id).ok_or_else(|| Error::UnknownSequence(id.to_string()))
    }

    pub fn annotation(&self, id: &str) -> Result<&ReferenceAnnotation> {
        self.annotations.get(id).ok_or_else(|| Error::MissingAnnotation(id.to_string()))
    }

    pub fn reference_frame(&self, ann: &ReferenceAnnotation) -> Result<&Frame> {
        self.sequence(&ann.sequence_id)?
            .frames
            .iter()
            .find(|f| f.index == ann.frame_index)
            .ok_or_else(|| Error::Empty(format!("frame {} missing", ann.id())))
    }
}

/// Uniform random box with sides in `[32, min(128, dim / 2)]`, fully inside
/// the frame. Small frames shrink the bounds.
pub fn random_crop_box(frame_w: usize, frame_h: usize, rng: &mut impl Rng) -> BoundingBox {
    let mut side = |dim: usize| {
        let hi = RANDOM_CROP_MAX.min(dim / 2).max(1);
        let lo = RANDOM_CROP_MIN.min(hi);
        rng.random_range(lo..=hi)
    };
    let w = side(frame_w);
    let h = side(frame_h);
    let x = rng.random_range(0..=frame_w - w);
    let y = rng.random_range(0..=frame_h - h);
    BoundingBox { x: x as f64, y: y as f64, w: w as f64, h: h as f64 }
}

/// Pad width for a box: `max(2, round(pad_ratio · min(w, h)))`.
pub fn pad_for(bbox: &BoundingBox, pad_ratio: f64) -> usize {
    ((pad_ratio * bbox.w.min(bbox.h)).round().max(0.0) as usize).max(MIN_PAD)
}

/// Cuts the base target patch out of the reference frame.
pub fn crop_target(frame: &ImageBuffer, ann: &ReferenceAnnotation, pad_ratio: f64) -> Result<TargetPatch> {
    if pad_ratio.is_nan() || pad_ratio < 0.0 {
        return Err(Error::InvalidPolicy(format!("pad ratio {pad_ratio} must be >= 0")));
    }
    let pad = pad_for(&ann.bbox, pad_ratio);
    let (image, inner_box) = crop_with_pad(frame, &ann.bbox, pad)?;
    Ok(TargetPatch { image, inner_box, pad, provenance: ann.id() })
}

/// Blend weights for a patch: 1 on pixels whose centers lie in the inner
/// box, 0 on the outermost ring, linear in between along each axis, with
/// the two axes combined by `min`.
pub fn pad_blend_mask(patch_w: usize, patch_h: usize, inner: &BoundingBox) -> AlphaMask {
    let ramp = |len: usize, start: f64, size: f64| -> Vec<f64> {
        let first = ((start - 0.5).ceil().max(0.0) as usize).min(len);
        let last_excl = ((start + size - 0.5).ceil().max(0.0) as usize).min(len);
        let right_ring = len - last_excl;
        (0..len)
            .map(|i| {
                if i < first {
                    i as f64 / first as f64
                } else if i >= last_excl {
                    (len - 1 - i) as f64 / right_ring as f64
                } else {
                    1.0
                }
            })
            .collect()
    };
    let ax = ramp(patch_w, inner.x, inner.w);
    let ay = ramp(patch_h, inner.y, inner.h);
    let alpha = (0..patch_h)
        .flat_map(|y| ax.iter().map(|a| a.min(ay[y])).collect::<Vec<_>>())
        .collect();
    AlphaMask::new(patch_w, patch_h, alpha).expect("ramp values lie in [0, 1]")
}

/// Result of pasting one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Pasted {
    pub image: ImageBuffer,
    /// Inner box in frame coordinates.
    pub bbox: BoundingBox,
    /// Top-left of the whole patch in the frame.
    pub offset: (i64, i64),
}

/// Pastes `patch` so that its inner-box origin lands at `at` (rounded to the
/// pixel grid). The inner box must end up fully inside the frame.
pub fn paste(patch: &TargetPatch, background: &ImageBuffer, at: (f64, f64)) -> Result<Pasted> {
    let ox = (at.0 - patch.inner_box.x).round() as i64;
    let oy = (at.1 - patch.inner_box.y).round() as i64;
    let bbox = patch.inner_box.translate(ox as f64, oy as f64);
    let eps = 1e-9;
    if bbox.x < -eps
        || bbox.y < -eps
        || bbox.right() > background.width() as f64 + eps
        || bbox.bottom() > background.height() as f64 + eps
    {
        return Err(Error::PasteOutOfFrame);
    }
    let mask = pad_blend_mask(patch.image.width(), patch.image.height(), &patch.inner_box);
    let image = composite(background, &patch.image, &mask, (ox, oy))?;
    Ok(Pasted { image, bbox, offset: (ox, oy) })
}

/// Range of integer patch offsets along one axis that keep `[start, start+size)`
/// inside `[0, frame)`.
fn offset_range(start: f64, size: f64, frame: usize) -> Option<(i64, i64)> {
    let lo = (-start).ceil() as i64;
    let hi = (frame as f64 - start - size).floor() as i64;
    (lo <= hi).then_some((lo, hi))
}

#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub patch: TargetPatch,
    pub feature: Vec<f64>,
    pub sequence_id: String,
}

/// Pool of candidate distractor patches with their color features.
#[derive(Debug, Clone, Default)]
pub struct PatchLibrary {
    pub entries: Vec<LibraryEntry>,
}

impl PatchLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, patch: TargetPatch, sequence_id: impl Into<String>) {
        let feature = color_histogram(&patch.image);
        self.entries.push(LibraryEntry { patch, feature, sequence_id: sequence_id.into() });
    }

    /// Indices of the `count` entries nearest to `feature`, skipping entries
    /// from `exclude_sequence`. Ties keep library order.
    pub fn nearest(&self, feature: &[f64], count: usize, exclude_sequence: Option<&str>) -> Vec<usize> {
        let mut ranked: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| Some(e.sequence_id.as_str()) != exclude_sequence)
            .map(|(i, e)| (feature_distance(&e.feature, feature), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(count).map(|(_, i)| i).collect()
    }
}

/// Crops `per_sequence` patches around each sequence's reference box: the
/// box itself, then variants with jittered center (±10 % of the size) and
/// scale (0.9–1.1).
pub fn build_patch_library(
    dataset: &SequenceDataset,
    per_sequence: usize,
    pad_ratio: f64,
    seed: u64,
) -> Result<PatchLibrary> {
    if dataset.sequences.is_empty() {
        return Err(Error::Empty("dataset has no sequences".into()));
    }
    let mut lib = PatchLibrary::default();
    for (id, ann) in &dataset.annotations {
        let frame = dataset.reference_frame(ann)?.image()?;
        let mut rng = seed::rng(seed::mix64(&[seed, seed::hash_str(id), LIBRARY_TAG]));
        for k in 0..per_sequence {
            let jittered = if k == 0 {
                ann.clone()
            } else {
                let b = ann.bbox;
                let s = rng.random_range(0.9..=1.1);
                let (cx, cy) = b.center();
                let cx = cx + rng.random_range(-0.1..=0.1) * b.w;
                let cy = cy + rng.random_range(-0.1..=0.1) * b.h;
                ReferenceAnnotation { bbox: BoundingBox::from_center(cx, cy, b.w * s, b.h * s)?, ..ann.clone() }
            };
            match crop_target(frame, &jittered, pad_ratio) {
                Ok(patch) => lib.push(patch, id.clone()),
                Err(Error::BoxOutsideFrame) => debug!("library crop {k} of {id} left the frame"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(lib)
}

/// Background choice for synthesized frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackgroundMode {
    #[default]
    SameSequence,
    DifferentSequence,
}

impl BackgroundMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same" | "same_sequence" => Some(BackgroundMode::SameSequence),
            "different" | "different_sequence" => Some(BackgroundMode::DifferentSequence),
            _ => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            BackgroundMode::SameSequence => "same",
            BackgroundMode::DifferentSequence => "different",
        }
    }
}

/// A pseudo frame with its exact ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedSample {
    pub id: String,
    pub image: ImageBuffer,
    pub bbox: BoundingBox,
    pub background: (String, usize),
    pub chain: TransformChain,
    pub distractor_boxes: Vec<BoundingBox>,
    /// Distractors that found no placement within the attempt budget.
    pub skipped_distractors: usize,
    pub seed: u64,
}

/// Pastes up to `count` library patches nearest to `target_feature` at
/// random spots whose IoU with `target` stays at or below
/// [`DISTRACTOR_MAX_IOU`]. Returns the new image, the placed boxes and the
/// number skipped.
pub fn place_distractors(
    image: &ImageBuffer,
    target: &BoundingBox,
    library: &PatchLibrary,
    target_feature: &[f64],
    count: usize,
    exclude_sequence: Option<&str>,
    rng: &mut impl Rng,
) -> Result<(ImageBuffer, Vec<BoundingBox>, usize)> {
    let mut out = image.clone();
    let mut boxes = Vec::new();
    let mut skipped = 0;
    for idx in library.nearest(target_feature, count, exclude_sequence) {
        let patch = &library.entries[idx].patch;
        let inner = patch.inner_box;
        let (Some((x_lo, x_hi)), Some((y_lo, y_hi))) = (
            offset_range(inner.x, inner.w, out.width()),
            offset_range(inner.y, inner.h, out.height()),
        ) else {
            skipped += 1;
            continue;
        };
        let mut placed = false;
        for _ in 0..DISTRACTOR_ATTEMPTS {
            let ox = rng.random_range(x_lo..=x_hi);
            let oy = rng.random_range(y_lo..=y_hi);
            let candidate = inner.translate(ox as f64, oy as f64);
            if iou(&candidate, target) <= DISTRACTOR_MAX_IOU {
                let pasted = paste(patch, &out, (candidate.x, candidate.y))?;
                out = pasted.image;
                boxes.push(pasted.bbox);
                placed = true;
                break;
            }
        }
        if !placed {
            skipped += 1;
        }
    }
    Ok((out, boxes, skipped))
}

/// Adds similar-patch distractors on top of an existing sample.
pub fn inject_distractors(
    sample: &SynthesizedSample,
    library: &PatchLibrary,
    target_feature: &[f64],
    count: usize,
    seed: u64,
) -> Result<SynthesizedSample> {
    if count == 0 {
        return Ok(sample.clone());
    }
    if library.is_empty() {
        return Err(Error::Empty("patch library".into()));
    }
    let own = sample.id.rsplit_once('/').map(|(s, _)| s);
    let mut rng = seed::rng(seed);
    let (image, boxes, skipped) =
        place_distractors(&sample.image, &sample.bbox, library, target_feature, count, own, &mut rng)?;
    let mut out = sample.clone();
    out.image = image;
    out.distractor_boxes.extend(boxes);
    out.skipped_distractors += skipped;
    Ok(out)
}

/// Settings shared by every sample of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSettings {
    pub policy: SchedulePolicy,
    pub pad_ratio: f64,
    pub background_mode: BackgroundMode,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            policy: SchedulePolicy::default(),
            pad_ratio: 0.1,
            background_mode: BackgroundMode::SameSequence,
        }
    }
}

/// Per-sample seed.
pub fn sample_seed(master_seed: u64, sequence_id: &str, index: usize) -> u64 {
    seed::mix64(&[master_seed, seed::hash_str(sequence_id), index as u64])
}

pub fn sample_id(sequence_id: &str, index: usize) -> String {
    format!("{sequence_id}/{index:06}")
}

/// Generates `n` samples for one sequence. Sample `j` depends only on the
/// inputs and `j`, so the result is identical under any thread count.
pub fn synthesize(
    dataset: &SequenceDataset,
    sequence_id: &str,
    settings: &SynthesisSettings,
    n: usize,
    master_seed: u64,
    library: Option<&PatchLibrary>,
) -> Result<Vec<SynthesizedSample>> {
    settings.policy.validate()?;
    let seq = dataset.sequence(sequence_id)?;
    if seq.frames.is_empty() {
        return Err(Error::Empty(format!("sequence {sequence_id:?} has no frames")));
    }
    let ann = dataset.annotation(sequence_id)?;
    let base = crop_target(dataset.reference_frame(ann)?.image()?, ann, settings.pad_ratio)?;
    let target_feature = color_histogram(&base.image);
    let others: Vec<&Sequence> = dataset.sequences.values().filter(|s| s.id != sequence_id).collect();
    if settings.background_mode == BackgroundMode::DifferentSequence && others.is_empty() {
        return Err(Error::Empty("different-sequence paste needs a second sequence".into()));
    }
    let ctx = SampleContext { seq, ann, base: &base, target_feature: &target_feature, others, settings, library };
    (0..n)
        .into_par_iter()
        .map(|j| ctx.sample(j, sample_seed(master_seed, sequence_id, j)))
        .collect()
}

struct SampleContext<'a> {
    seq: &'a Sequence,
    ann: &'a ReferenceAnnotation,
    base: &'a TargetPatch,
    target_feature: &'a [f64],
    others: Vec<&'a Sequence>,
    settings: &'a SynthesisSettings,
    library: Option<&'a PatchLibrary>,
}

impl SampleContext<'_> {
    fn sample(&self, j: usize, seed_j: u64) -> Result<SynthesizedSample> {
        let mut rng = seed::rng(seed_j);
        let frame = match self.settings.background_mode {
            BackgroundMode::SameSequence => &self.seq.frames[rng.random_range(0..self.seq.frames.len())],
            BackgroundMode::DifferentSequence => {
                let s = self.others[rng.random_range(0..self.others.len())];
                &s.frames[rng.random_range(0..s.frames.len())]
            }
        };
        let background = frame.image()?;
        let (ref_cx, ref_cy) = self.ann.bbox.center();

        let mut last_err = Error::TransformCollapsed;
        for attempt in 0..=CHAIN_ATTEMPTS {
            let chain_seed = rng.next_u64();
            let mut chain = sample_chain(&self.settings.policy, chain_seed)?;
            if attempt == CHAIN_ATTEMPTS {
                // last resort: keep only the shift
                chain = chain.only(|k| k == crate::transforms::TransformKind::Shift);
            }
            let patch = match apply_chain(self.base, &chain) {
                Ok(p) => p,
                Err(e @ Error::TransformCollapsed) => {
                    last_err = e;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let inner = patch.inner_box;
            let (Some((x_lo, x_hi)), Some((y_lo, y_hi))) = (
                offset_range(inner.x, inner.w, background.width()),
                offset_range(inner.y, inner.h, background.height()),
            ) else {
                last_err = Error::PasteOutOfFrame;
                continue;
            };
            let (dx, dy) = chain.shift();
            let ox = ((ref_cx + dx - inner.w / 2.0 - inner.x).round() as i64).clamp(x_lo, x_hi);
            let oy = ((ref_cy + dy - inner.h / 2.0 - inner.y).round() as i64).clamp(y_lo, y_hi);
            let target_box = inner.translate(ox as f64, oy as f64);

            let mut canvas = background.clone();
            let mut distractor_boxes = Vec::new();
            let mut skipped = 0;
            let count = chain.distractor_count();
            if let (Some(lib), true) = (self.library, count > 0) {
                if !lib.is_empty() {
                    let placed = place_distractors(
                        &canvas,
                        &target_box,
                        lib,
                        self.target_feature,
                        count,
                        Some(&self.seq.id),
                        &mut rng,
                    )?;
                    canvas = placed.0;
                    distractor_boxes = placed.1;
                    skipped = placed.2;
                }
            }
            let pasted = paste(&patch, &canvas, (target_box.x, target_box.y))?;
            return Ok(SynthesizedSample {
                id: sample_id(&self.seq.id, j),
                image: pasted.image,
                bbox: pasted.bbox,
                background: (frame.sequence_id.clone(), frame.index),
                chain,
                distractor_boxes,
                skipped_distractors: skipped,
                seed: seed_j,
            });
        }
        Err(last_err)
    }
}
