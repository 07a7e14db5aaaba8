//! Tracking-oriented transforms, the stochastic schedule that picks a
//! compatible subset of them per sample, and their application to a target
//! patch with exact box propagation.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed6;
use crate::geometry::{transform_box, AffineMap, BoundingBox};
use crate::imaging::{convolve, quantize, warp_affine, ImageBuffer, Kernel};
use crate::seed;
use crate::synthesis::TargetPatch;

const MIN_TARGET_SIDE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    Shift,
    Rescale,
    Flip,
    Shear,
    Cutout,
    ShakingBlur,
    ColorJitter,
    SimilarPatchPaste,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Shift,
        TransformKind::Rescale,
        TransformKind::Flip,
        TransformKind::Shear,
        TransformKind::Cutout,
        TransformKind::ShakingBlur,
        TransformKind::ColorJitter,
        TransformKind::SimilarPatchPaste,
    ];

    /// Key used in config files.
    pub fn key(self) -> &'static str {
        match self {
            TransformKind::Shift => "shift",
            TransformKind::Rescale => "rescale",
            TransformKind::Flip => "flip",
            TransformKind::Shear => "shear",
            TransformKind::Cutout => "cutout",
            TransformKind::ShakingBlur => "shaking_blur",
            TransformKind::ColorJitter => "color_jitter",
            TransformKind::SimilarPatchPaste => "similar_patch_paste",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.key() == key)
    }

    /// Position in the fixed application order. Shift and similar-patch
    /// paste act at paste time and sort outside the patch stages.
    fn stage(self) -> u8 {
        match self {
            TransformKind::Shift => 0,
            TransformKind::Rescale => 1,
            TransformKind::Shear => 2,
            TransformKind::Flip => 3,
            TransformKind::ColorJitter => 4,
            TransformKind::ShakingBlur => 5,
            TransformKind::Cutout => 6,
            TransformKind::SimilarPatchPaste => 7,
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(self, TransformKind::Rescale | TransformKind::Shear | TransformKind::Flip)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// One sampled transform with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum TransformParams {
    /// Paste-location offset in frame pixels.
    Shift {
        #[serde(serialize_with = "fixed6::serialize")]
        dx: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        dy: f64,
    },
    Rescale {
        #[serde(serialize_with = "fixed6::serialize")]
        sx: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        sy: f64,
    },
    Flip { horizontal: bool },
    /// `x' = x + mx·y`, `y' = my·x + y`.
    Shear {
        #[serde(serialize_with = "fixed6::serialize")]
        mx: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        my: f64,
    },
    /// Zero-filled rectangle, as fractions of the patch dimensions.
    Cutout {
        #[serde(serialize_with = "fixed6::serialize")]
        rx: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        ry: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        rw: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        rh: f64,
    },
    ShakingBlur { k: usize },
    ColorJitter {
        #[serde(serialize_with = "fixed6::serialize")]
        brightness: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        contrast: f64,
        #[serde(serialize_with = "fixed6::serialize")]
        saturation: f64,
    },
    SimilarPatchPaste { count: usize },
}

impl TransformParams {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformParams::Shift { .. } => TransformKind::Shift,
            TransformParams::Rescale { .. } => TransformKind::Rescale,
            TransformParams::Flip { .. } => TransformKind::Flip,
            TransformParams::Shear { .. } => TransformKind::Shear,
            TransformParams::Cutout { .. } => TransformKind::Cutout,
            TransformParams::ShakingBlur { .. } => TransformKind::ShakingBlur,
            TransformParams::ColorJitter { .. } => TransformKind::ColorJitter,
            TransformParams::SimilarPatchPaste { .. } => TransformKind::SimilarPatchPaste,
        }
    }

    /// Numeric parameters in declaration order, for statistics.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            TransformParams::Shift { dx, dy } => vec![("dx", dx), ("dy", dy)],
            TransformParams::Rescale { sx, sy } => vec![("sx", sx), ("sy", sy)],
            TransformParams::Flip { horizontal } => vec![("horizontal", horizontal as u8 as f64)],
            TransformParams::Shear { mx, my } => vec![("mx", mx), ("my", my)],
            TransformParams::Cutout { rx, ry, rw, rh } => {
                vec![("rx", rx), ("ry", ry), ("rw", rw), ("rh", rh), ("area", rw * rh)]
            }
            TransformParams::ShakingBlur { k } => vec![("k", k as f64)],
            TransformParams::ColorJitter { brightness, contrast, saturation } => vec![
                ("brightness", brightness),
                ("contrast", contrast),
                ("saturation", saturation),
            ],
            TransformParams::SimilarPatchPaste { count } => vec![("count", count as f64)],
        }
    }
}

/// Ordered subset of transforms drawn for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    pub steps: Vec<TransformParams>,
    pub seed: u64,
}

impl TransformChain {
    pub fn empty() -> Self {
        TransformChain { steps: Vec::new(), seed: 0 }
    }

    pub fn contains(&self, kind: TransformKind) -> bool {
        self.steps.iter().any(|s| s.kind() == kind)
    }

    pub fn get(&self, kind: TransformKind) -> Option<&TransformParams> {
        self.steps.iter().find(|s| s.kind() == kind)
    }

    pub fn shift(&self) -> (f64, f64) {
        match self.get(TransformKind::Shift) {
            Some(&TransformParams::Shift { dx, dy }) => (dx, dy),
            _ => (0.0, 0.0),
        }
    }

    pub fn distractor_count(&self) -> usize {
        match self.get(TransformKind::SimilarPatchPaste) {
            Some(&TransformParams::SimilarPatchPaste { count }) => count,
            _ => 0,
        }
    }

    /// Checks the compatibility and ordering rules.
    pub fn validate(&self) -> Result<()> {
        if self.contains(TransformKind::Cutout) && self.contains(TransformKind::ShakingBlur) {
            return Err(Error::InvalidPolicy("cutout and shaking blur in one chain".into()));
        }
        let stages: Vec<u8> = self.steps.iter().map(|s| s.kind().stage()).collect();
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPolicy("chain steps out of order or repeated".into()));
        }
        Ok(())
    }

    /// The chain restricted to the given kinds.
    pub fn only(&self, keep: impl Fn(TransformKind) -> bool) -> TransformChain {
        TransformChain {
            steps: self.steps.iter().filter(|s| keep(s.kind())).cloned().collect(),
            seed: self.seed,
        }
    }
}

/// Enable flag, inclusion probability and parameter range for one kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindPolicy {
    pub enable: bool,
    pub probability: f64,
    pub range: (f64, f64),
}

impl KindPolicy {
    pub const fn new(enable: bool, probability: f64, lo: f64, hi: f64) -> Self {
        KindPolicy { enable, probability, range: (lo, hi) }
    }

    fn active_probability(&self) -> f64 {
        if self.enable {
            self.probability
        } else {
            0.0
        }
    }
}

/// Per-kind schedule. Ranges mean:
///
/// * shift: offset in pixels, drawn per axis
/// * rescale: scale ratio
/// * shear: `mx`, `my` drawn independently
/// * cutout: area as a fraction of the patch
/// * shaking_blur: odd kernel sizes, inclusive
/// * color_jitter: multiplicative factor, drawn per component
/// * similar_patch_paste: distractor count, inclusive
///
/// Shift is always part of a chain; its probability is not consulted.
/// Flip has no range.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePolicy {
    pub shift: KindPolicy,
    pub rescale: KindPolicy,
    pub flip: KindPolicy,
    pub shear: KindPolicy,
    pub cutout: KindPolicy,
    pub shaking_blur: KindPolicy,
    pub color_jitter: KindPolicy,
    pub similar_patch_paste: KindPolicy,
    /// Draw separate horizontal and vertical rescale ratios.
    pub anisotropic_rescale: bool,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        SchedulePolicy {
            shift: KindPolicy::new(true, 1.0, -96.0, 96.0),
            rescale: KindPolicy::new(true, 1.0, 0.7, 1.3),
            flip: KindPolicy::new(false, 0.5, 0.0, 0.0),
            shear: KindPolicy::new(true, 0.5, -0.3, 0.3),
            cutout: KindPolicy::new(true, 0.15, 0.10, 0.40),
            shaking_blur: KindPolicy::new(true, 0.2, 3.0, 15.0),
            color_jitter: KindPolicy::new(true, 0.4, 0.6, 1.4),
            similar_patch_paste: KindPolicy::new(true, 0.8, 1.0, 1.0),
            anisotropic_rescale: false,
        }
    }
}

/// Challenge-oriented overrides of the default schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Scale variation: rescale always on with a wider range.
    ScaleVariation,
    /// Occlusion: cutout with probability 0.5.
    Occlusion,
    /// Motion blur: shaking blur with probability 0.5.
    MotionBlur,
    /// Background clutter: three similar-patch distractors.
    BackgroundClutter,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Preset> {
        match name.to_ascii_lowercase().as_str() {
            "sv" | "scale" | "scale_variation" => Some(Preset::ScaleVariation),
            "occ" | "occlusion" => Some(Preset::Occlusion),
            "mb" | "blur" | "motion_blur" => Some(Preset::MotionBlur),
            "bc" | "clutter" | "background_clutter" => Some(Preset::BackgroundClutter),
            _ => None,
        }
    }

    pub fn apply(self, policy: &mut SchedulePolicy) {
        match self {
            Preset::ScaleVariation => {
                policy.rescale.enable = true;
                policy.rescale.probability = 1.0;
                policy.rescale.range = (0.5, 1.5);
            }
            Preset::Occlusion => {
                policy.cutout.enable = true;
                policy.cutout.probability = 0.5;
            }
            Preset::MotionBlur => {
                policy.shaking_blur.enable = true;
                policy.shaking_blur.probability = 0.5;
            }
            Preset::BackgroundClutter => {
                policy.similar_patch_paste.enable = true;
                policy.similar_patch_paste.range = (3.0, 3.0);
            }
        }
    }
}

impl SchedulePolicy {
    /// Every kind disabled; shift pinned at zero.
    pub fn identity() -> Self {
        let mut p = SchedulePolicy::default();
        for kind in TransformKind::ALL {
            p.kind_mut(kind).enable = false;
        }
        p.shift = KindPolicy::new(true, 1.0, 0.0, 0.0);
        p
    }

    pub fn kind(&self, kind: TransformKind) -> &KindPolicy {
        match kind {
            TransformKind::Shift => &self.shift,
            TransformKind::Rescale => &self.rescale,
            TransformKind::Flip => &self.flip,
            TransformKind::Shear => &self.shear,
            TransformKind::Cutout => &self.cutout,
            TransformKind::ShakingBlur => &self.shaking_blur,
            TransformKind::ColorJitter => &self.color_jitter,
            TransformKind::SimilarPatchPaste => &self.similar_patch_paste,
        }
    }

    pub fn kind_mut(&mut self, kind: TransformKind) -> &mut KindPolicy {
        match kind {
            TransformKind::Shift => &mut self.shift,
            TransformKind::Rescale => &mut self.rescale,
            TransformKind::Flip => &mut self.flip,
            TransformKind::Shear => &mut self.shear,
            TransformKind::Cutout => &mut self.cutout,
            TransformKind::ShakingBlur => &mut self.shaking_blur,
            TransformKind::ColorJitter => &mut self.color_jitter,
            TransformKind::SimilarPatchPaste => &mut self.similar_patch_paste,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPolicy(msg));
        for kind in TransformKind::ALL {
            let k = self.kind(kind);
            if !(0.0..=1.0).contains(&k.probability) {
                return bad(format!("{kind}: probability {} outside [0, 1]", k.probability));
            }
            let (lo, hi) = k.range;
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return bad(format!("{kind}: empty range [{lo}, {hi}]"));
            }
        }
        if self.rescale.range.0 <= 0.0 {
            return bad("rescale: lower bound must be > 0".into());
        }
        let (lo, hi) = self.shear.range;
        if lo <= -1.0 || hi >= 1.0 {
            return bad("shear: range must lie inside (-1, 1)".into());
        }
        let (lo, hi) = self.cutout.range;
        if lo <= 0.0 || hi > 1.0 {
            return bad("cutout: area fraction must lie in (0, 1]".into());
        }
        if blur_sizes(self.shaking_blur.range).is_empty() {
            return bad("shaking_blur: range holds no odd size >= 3".into());
        }
        if self.color_jitter.range.0 <= 0.0 {
            return bad("color_jitter: factors must be > 0".into());
        }
        let (lo, hi) = self.similar_patch_paste.range;
        if lo < 0.0 || lo.fract() != 0.0 || hi.fract() != 0.0 {
            return bad("similar_patch_paste: count range must be non-negative integers".into());
        }
        Ok(())
    }
}

fn blur_sizes((lo, hi): (f64, f64)) -> Vec<usize> {
    let lo = lo.ceil().max(3.0) as usize;
    let hi = hi.floor().max(0.0) as usize;
    (lo..=hi).filter(|k| k % 2 == 1).collect()
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws a chain from `policy`. Each enabled kind is included independently
/// with its probability. Cutout and shaking blur are mutually exclusive:
/// blur is drawn only when cutout was not, with its probability rescaled by
/// `1 / (1 - p_cutout)` so that its marginal frequency still matches the
/// policy.
pub fn sample_chain(policy: &SchedulePolicy, seed: u64) -> Result<TransformChain> {
    policy.validate()?;
    let mut rng = seed::rng(seed);
    let mut steps = Vec::new();

    let (dx, dy) = if policy.shift.enable {
        (uniform(&mut rng, policy.shift.range), uniform(&mut rng, policy.shift.range))
    } else {
        (0.0, 0.0)
    };
    steps.push(TransformParams::Shift { dx, dy });

    let include = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| rng.random::<f64>() < p;

    if include(&mut rng, policy.rescale.active_probability()) {
        let sx = uniform(&mut rng, policy.rescale.range);
        let sy = if policy.anisotropic_rescale { uniform(&mut rng, policy.rescale.range) } else { sx };
        steps.push(TransformParams::Rescale { sx, sy });
    }
    let shear = include(&mut rng, policy.shear.active_probability()).then(|| TransformParams::Shear {
        mx: uniform(&mut rng, policy.shear.range),
        my: uniform(&mut rng, policy.shear.range),
    });
    steps.extend(shear);
    if include(&mut rng, policy.flip.active_probability()) {
        steps.push(TransformParams::Flip { horizontal: true });
    }
    let jitter = include(&mut rng, policy.color_jitter.active_probability()).then(|| {
        TransformParams::ColorJitter {
            brightness: uniform(&mut rng, policy.color_jitter.range),
            contrast: uniform(&mut rng, policy.color_jitter.range),
            saturation: uniform(&mut rng, policy.color_jitter.range),
        }
    });
    steps.extend(jitter);

    let p_cutout = policy.cutout.active_probability();
    let cutout = include(&mut rng, p_cutout);
    let p_blur = if p_cutout < 1.0 {
        (policy.shaking_blur.active_probability() / (1.0 - p_cutout)).min(1.0)
    } else {
        0.0
    };
    let blur_draw = rng.random::<f64>();
    if !cutout && blur_draw < p_blur {
        let sizes = blur_sizes(policy.shaking_blur.range);
        let k = sizes[rng.random_range(0..sizes.len())];
        steps.push(TransformParams::ShakingBlur { k });
    }
    if cutout {
        let area = uniform(&mut rng, policy.cutout.range);
        let aspect = rng.random_range(0.5f64.ln()..=2.0f64.ln()).exp();
        let rw = (area * aspect).sqrt().min(1.0);
        let rh = (area / aspect).sqrt().min(1.0);
        let rx = rng.random_range(0.0..=1.0 - rw);
        let ry = rng.random_range(0.0..=1.0 - rh);
        steps.push(TransformParams::Cutout { rx, ry, rw, rh });
    }

    if include(&mut rng, policy.similar_patch_paste.active_probability()) {
        let (lo, hi) = policy.similar_patch_paste.range;
        let count = rng.random_range(lo as usize..=hi as usize);
        steps.push(TransformParams::SimilarPatchPaste { count });
    }

    let chain = TransformChain { steps, seed };
    debug_assert!(chain.validate().is_ok());
    Ok(chain)
}

/// Cross-shaped blur kernel: uniform weight `1 / (2k - 1)` on the central
/// row and column, zero elsewhere.
pub fn shaking_blur_kernel(k: usize) -> Result<Kernel> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("shaking blur size {k} must be odd and >= 3")));
    }
    let c = k / 2;
    let w = 1.0 / (2 * k - 1) as f64;
    let weights = (0..k * k)
        .map(|i| if i / k == c || i % k == c { w } else { 0.0 })
        .collect();
    Kernel::new(k, weights)
}

/// Brightness, then contrast about the mean luma, then saturation toward the
/// per-pixel luma. Clamped and quantized once at the end.
pub fn color_jitter(img: &ImageBuffer, brightness: f64, contrast: f64, saturation: f64) -> ImageBuffer {
    let mut vals: Vec<f64> = img.pixels().iter().map(|&p| p as f64 * brightness).collect();
    let luma = |p: &[f64]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    let n = (img.width() * img.height()) as f64;
    let mean = vals.chunks_exact(3).map(luma).sum::<f64>() / n;
    for v in vals.iter_mut() {
        *v = mean + contrast * (*v - mean);
    }
    for px in vals.chunks_exact_mut(3) {
        let l = luma(px);
        for v in px.iter_mut() {
            *v = l + saturation * (*v - l);
        }
    }
    let pixels = vals.into_iter().map(quantize).collect();
    ImageBuffer::new(img.width(), img.height(), pixels).expect("dimensions preserved")
}

/// Zeroes the cutout rectangle in all channels.
pub fn cutout(img: &ImageBuffer, rx: f64, ry: f64, rw: f64, rh: f64) -> ImageBuffer {
    let (x0, x1, y0, y1) = cutout_rect(img.width(), img.height(), rx, ry, rw, rh);
    let mut out = img.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(x, y, [0, 0, 0]);
        }
    }
    out
}

/// Pixel extents `(x0, x1, y0, y1)` (exclusive ends) of a cutout rectangle.
pub fn cutout_rect(w: usize, h: usize, rx: f64, ry: f64, rw: f64, rh: f64) -> (usize, usize, usize, usize) {
    let span = |r: f64, len: usize| ((r * len as f64).round().max(0.0) as usize).min(len);
    (span(rx, w), span(rx + rw, w), span(ry, h), span(ry + rh, h))
}

/// Composed geometric map (edge coordinates) and output size for the
/// geometric steps of `chain`, starting from a `w×h` patch.
pub fn geometric_map(chain: &TransformChain, w: usize, h: usize) -> (AffineMap, usize, usize) {
    let mut steps: Vec<&TransformParams> = chain.steps.iter().filter(|s| s.kind().is_geometric()).collect();
    steps.sort_by_key(|s| s.kind().stage());
    let mut m = AffineMap::identity();
    let (mut cw, mut ch) = (w as f64, h as f64);
    for step in steps {
        let step_map = match *step {
            TransformParams::Rescale { sx, sy } => {
                cw *= sx;
                ch *= sy;
                AffineMap::scale(sx, sy)
            }
            TransformParams::Shear { mx, my } => {
                let shear = AffineMap::shear(mx, my);
                let corners = [(0.0, 0.0), (cw, 0.0), (0.0, ch), (cw, ch)].map(|(x, y)| shear.apply(x, y));
                let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
                let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
                let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                cw = max_x - min_x;
                ch = max_y - min_y;
                shear.then(&AffineMap::translation(-min_x, -min_y))
            }
            TransformParams::Flip { horizontal: true } => AffineMap::flip_horizontal(cw),
            TransformParams::Flip { horizontal: false } => AffineMap::new(1.0, 0.0, 0.0, 0.0, -1.0, ch),
            _ => unreachable!("filtered to geometric steps"),
        };
        m = m.then(&step_map);
    }
    let out_w = (cw.round() as usize).max(1);
    let out_h = (ch.round() as usize).max(1);
    (m, out_w, out_h)
}

/// Applies the patch-level steps of `chain` in the fixed order
/// rescale → shear → flip → color jitter → shaking blur → cutout.
///
/// Geometric steps are composed into one map and resampled once; the inner
/// box is pushed through the same map as a corner set and enclosed once.
/// Photometric steps and cutout leave the box unchanged.
pub fn apply_chain(patch: &TargetPatch, chain: &TransformChain) -> Result<TargetPatch> {
    let mut image = patch.image.clone();
    let mut inner = patch.inner_box;

    if chain.steps.iter().any(|s| s.kind().is_geometric()) {
        let (m, out_w, out_h) = geometric_map(chain, image.width(), image.height());
        image = warp_affine(&image, &m.to_pixel_index(), out_w, out_h)?;
        let moved = transform_box(&m, &inner)?;
        let bounds = BoundingBox::new(0.0, 0.0, out_w as f64, out_h as f64)?;
        inner = moved.intersection(&bounds).ok_or(Error::TransformCollapsed)?;
    }
    if inner.w < MIN_TARGET_SIDE || inner.h < MIN_TARGET_SIDE {
        return Err(Error::TransformCollapsed);
    }

    let mut steps: Vec<&TransformParams> = chain.steps.iter().collect();
    steps.sort_by_key(|s| s.kind().stage());
    for step in steps {
        match *step {
            TransformParams::ColorJitter { brightness, contrast, saturation } => {
                image = color_jitter(&image, brightness, contrast, saturation);
            }
            TransformParams::ShakingBlur { k } => {
                image = convolve(&image, &shaking_blur_kernel(k)?);
            }
            TransformParams::Cutout { rx, ry, rw, rh } => {
                image = cutout(&image, rx, ry, rw, rh);
            }
            _ => {}
        }
    }

    Ok(TargetPatch {
        image,
        inner_box: inner,
        pad: patch.pad,
        provenance: patch.provenance.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn patch(img: ImageBuffer, inner: BoundingBox) -> TargetPatch {
        TargetPatch { image: img, inner_box: inner, pad: 10, provenance: "test".into() }
    }

    /// Detects the extents of pixels at or above half intensity.
    fn marker_extents(img: &ImageBuffer) -> Option<(usize, usize, usize, usize)> {
        let mut ext: Option<(usize, usize, usize, usize)> = None;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y)[0] >= 128 {
                    ext = Some(match ext {
                        None => (x, x + 1, y, y + 1),
                        Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x + 1), y0.min(y), y1.max(y + 1)),
                    });
                }
            }
        }
        ext
    }

    #[test]
    fn degenerate_policy_gives_zero_shift_only() {
        let mut policy = SchedulePolicy::default();
        for kind in TransformKind::ALL {
            policy.kind_mut(kind).probability = 0.0;
        }
        policy.shift.range = (0.0, 0.0);
        for seed in 0..50 {
            let chain = sample_chain(&policy, seed).unwrap();
            assert_eq!(chain.steps, vec![TransformParams::Shift { dx: 0.0, dy: 0.0 }]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let policy = SchedulePolicy::default();
        for seed in [0, 1, 42, u64::MAX] {
            assert_eq!(sample_chain(&policy, seed).unwrap(), sample_chain(&policy, seed).unwrap());
        }
        assert_ne!(sample_chain(&policy, 1).unwrap(), sample_chain(&policy, 2).unwrap());
    }

    #[test]
    fn default_frequencies_and_compatibility() {
        let policy = SchedulePolicy::default();
        let n = 10_000;
        let mut counts = std::collections::BTreeMap::new();
        for seed in 0..n {
            let chain = sample_chain(&policy, seed).unwrap();
            chain.validate().unwrap();
            assert!(!chain.contains(TransformKind::Flip));
            for s in &chain.steps {
                *counts.entry(s.kind()).or_insert(0usize) += 1;
            }
        }
        let freq = |k| *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
        assert_abs_diff_eq!(freq(TransformKind::Cutout), 0.15, epsilon = 0.02);
        assert_abs_diff_eq!(freq(TransformKind::ShakingBlur), 0.2, epsilon = 0.02);
        assert_abs_diff_eq!(freq(TransformKind::Shear), 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(freq(TransformKind::ColorJitter), 0.4, epsilon = 0.02);
        assert_abs_diff_eq!(freq(TransformKind::SimilarPatchPaste), 0.8, epsilon = 0.02);
        assert_eq!(freq(TransformKind::Shift), 1.0);
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = SchedulePolicy::default();
        p.cutout.probability = 1.5;
        assert!(sample_chain(&p, 0).is_err());
        let mut p = SchedulePolicy::default();
        p.rescale.range = (0.0, 1.3);
        assert!(p.validate().is_err());
        let mut p = SchedulePolicy::default();
        p.shear.range = (0.3, -0.3);
        assert!(p.validate().is_err());
        let mut p = SchedulePolicy::default();
        p.shaking_blur.range = (4.0, 4.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn presets_override_named_fields_only() {
        let base = SchedulePolicy::default();
        let mut occ = base.clone();
        Preset::Occlusion.apply(&mut occ);
        assert_eq!(occ.cutout.probability, 0.5);
        assert_eq!(SchedulePolicy { cutout: base.cutout, ..occ.clone() }, base);
        let mut bc = base.clone();
        Preset::BackgroundClutter.apply(&mut bc);
        assert_eq!(bc.similar_patch_paste.range, (3.0, 3.0));
        assert_eq!(Preset::parse("OCC"), Some(Preset::Occlusion));
        assert_eq!(Preset::parse("nope"), None);
    }

    #[test]
    fn shaking_blur_kernel_shape() {
        let k3 = shaking_blur_kernel(3).unwrap();
        assert_eq!(k3.weights().iter().filter(|w| **w != 0.0).count(), 5);
        assert!(k3.weights().iter().all(|w| *w == 0.0 || (*w - 0.2).abs() < 1e-15));
        let k5 = shaking_blur_kernel(5).unwrap();
        assert_eq!(k5.weights().iter().filter(|w| **w != 0.0).count(), 9);
        assert!(k5.weights().iter().all(|w| *w == 0.0 || (*w - 1.0 / 9.0).abs() < 1e-15));
        for k in (3..=15).step_by(2) {
            let sum: f64 = shaking_blur_kernel(k).unwrap().weights().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
        assert!(shaking_blur_kernel(4).is_err());
        assert!(shaking_blur_kernel(1).is_err());
    }

    #[test]
    fn color_jitter_examples() {
        let img = textured(8, 6, 3);
        assert_eq!(color_jitter(&img, 1.0, 1.0, 1.0), img);
        let gray = ImageBuffer::filled(4, 4, [200; 3]);
        assert_eq!(color_jitter(&gray, 0.5, 1.0, 1.0), ImageBuffer::filled(4, 4, [100; 3]));
        let desat = color_jitter(&img, 1.0, 1.0, 0.0);
        let luma = img.luma();
        for (i, px) in desat.pixels().chunks_exact(3).enumerate() {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
            assert_eq!(px[0], quantize(luma[i]));
        }
    }

    #[test]
    fn empty_chain_is_identity() {
        let p = patch(textured(30, 20, 1), BoundingBox::new(4., 4., 22., 12.).unwrap());
        let out = apply_chain(&p, &TransformChain::empty()).unwrap();
        assert_eq!(out.image, p.image);
        assert_eq!(out.inner_box, p.inner_box);
    }

    #[test]
    fn rescale_propagates_box() {
        let inner = BoundingBox::new(10., 10., 80., 80.).unwrap();
        let marker = ImageBuffer::from_fn(100, 100, |x, y| {
            if (10..90).contains(&x) && (10..90).contains(&y) { [255; 3] } else { [0; 3] }
        });
        let chain = TransformChain { steps: vec![TransformParams::Rescale { sx: 1.3, sy: 1.3 }], seed: 0 };
        let out = apply_chain(&patch(marker, inner), &chain).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (130, 130));
        assert_abs_diff_eq!(out.inner_box.x, 13.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.inner_box.w, 104.0, epsilon = 1e-9);
        let (x0, x1, y0, y1) = marker_extents(&out.image).unwrap();
        assert!((x0 as f64 - 13.0).abs() <= 1.0 && (x1 as f64 - 117.0).abs() <= 1.0);
        assert!((y0 as f64 - 13.0).abs() <= 1.0 && (y1 as f64 - 117.0).abs() <= 1.0);
    }

    #[test]
    fn cutout_zeroes_rectangle_only() {
        let img = ImageBuffer::filled(40, 40, [90, 140, 210]);
        let p = patch(img.clone(), BoundingBox::new(5., 5., 30., 30.).unwrap());
        let step = TransformParams::Cutout { rx: 0.25, ry: 0.25, rw: 0.5, rh: 0.5 };
        let out = apply_chain(&p, &TransformChain { steps: vec![step], seed: 0 }).unwrap();
        assert_eq!(out.inner_box, p.inner_box);
        for y in 0..40 {
            for x in 0..40 {
                let inside = (10..30).contains(&x) && (10..30).contains(&y);
                assert_eq!(out.image.get(x, y), if inside { [0; 3] } else { img.get(x, y) });
            }
        }
    }

    #[test]
    fn shear_and_flip_box_propagation() {
        let inner = BoundingBox::new(8., 8., 40., 24.).unwrap();
        let marker = ImageBuffer::from_fn(56, 40, |x, y| {
            if (8..48).contains(&x) && (8..32).contains(&y) { [255; 3] } else { [0; 3] }
        });
        let chain = TransformChain {
            steps: vec![
                TransformParams::Shear { mx: 0.25, my: -0.2 },
                TransformParams::Flip { horizontal: true },
            ],
            seed: 0,
        };
        let out = apply_chain(&patch(marker, inner), &chain).unwrap();
        let (x0, x1, y0, y1) = marker_extents(&out.image).unwrap();
        let b = out.inner_box;
        assert!((x0 as f64 - b.x).abs() <= 1.0, "{x0} vs {}", b.x);
        assert!((x1 as f64 - b.right()).abs() <= 1.0, "{x1} vs {}", b.right());
        assert!((y0 as f64 - b.y).abs() <= 1.0, "{y0} vs {}", b.y);
        assert!((y1 as f64 - b.bottom()).abs() <= 1.0, "{y1} vs {}", b.bottom());
    }

    #[test]
    fn collapse_is_reported() {
        let p = patch(textured(12, 12, 9), BoundingBox::new(5., 5., 2., 2.).unwrap());
        let chain = TransformChain { steps: vec![TransformParams::Rescale { sx: 0.7, sy: 0.7 }], seed: 0 };
        assert!(matches!(apply_chain(&p, &chain), Err(Error::TransformCollapsed)));
    }

    #[test]
    fn manifest_params_round_trip() {
        let chain = sample_chain(&SchedulePolicy::default(), 11).unwrap();
        let json = serde_json::to_string(&chain.steps).unwrap();
        let back: Vec<TransformParams> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), chain.steps.len());
        for (a, b) in back.iter().zip(&chain.steps) {
            assert_eq!(a.kind(), b.kind());
            for ((_, x), (_, y)) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 5e-7);
            }
        }
        assert!(json.contains(r#""kind":"Shift","params":{"dx":"#));
    }
}
