//! 8-bit RGB buffers and the pixel operations the synthesis pipeline needs.
//!
//! All photometric math runs in `f64` and is quantized once at the end with
//! round-half-up, so results are bit-reproducible.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{clamp_box, AffineMap, BoundingBox};

pub const HISTOGRAM_BINS: usize = 512;

/// Row-major, channel-interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Round-half-up quantization to `[0, 255]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty dimensions {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(ImageBuffer { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        ImageBuffer { width, height, pixels }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        ImageBuffer { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> [u8; 3] {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(cx, cy)
    }

    /// Per-pixel luma `0.299 R + 0.587 G + 0.114 B`, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        ImageBuffer::new(w as usize, h as usize, img.into_raw())
    }

    /// Writes the image; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// Copies the `w×h` region starting at `(x0, y0)`, replicating edges for
    /// any part outside the image.
    pub fn crop_replicate(&self, x0: i64, y0: i64, w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| self.get_clamped(x0 + x as i64, y0 + y as i64))
    }

    /// Draws a one-pixel rectangle outline of thickness `thickness`.
    pub fn draw_rect(&mut self, b: &BoundingBox, rgb: [u8; 3], thickness: usize) {
        let x0 = b.x.round() as i64;
        let y0 = b.y.round() as i64;
        let x1 = b.right().round() as i64 - 1;
        let y1 = b.bottom().round() as i64 - 1;
        let t = thickness as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let on_edge = x < x0 + t || x > x1 - t || y < y0 + t || y > y1 - t;
                if on_edge && x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.set(x as usize, y as usize, rgb);
                }
            }
        }
    }
}

/// Crops `b` (rounded to whole pixels) with a ring of `pad` pixels on every
/// side. Parts outside the frame are filled by edge replication. Returns the
/// patch and the inner box in patch coordinates.
pub fn crop_with_pad(img: &ImageBuffer, b: &BoundingBox, pad: usize) -> Result<(ImageBuffer, BoundingBox)> {
    if clamp_box(b, img.width as f64, img.height as f64).is_none() {
        return Err(Error::BoxOutsideFrame);
    }
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let w = (b.w.round() as usize).max(1);
    let h = (b.h.round() as usize).max(1);
    let p = pad as i64;
    let patch = img.crop_replicate(x0 - p, y0 - p, w + 2 * pad, h + 2 * pad);
    let inner = BoundingBox::new(pad as f64, pad as f64, w as f64, h as f64)?;
    Ok((patch, inner))
}

/// Bilinear sample at a real-valued pixel-index position with edge replication.
#[inline]
fn sample_bilinear(img: &ImageBuffer, sx: f64, sy: f64) -> [f64; 3] {
    let fx = sx.floor();
    let fy = sy.floor();
    let (ax, ay) = (sx - fx, sy - fy);
    let (x0, y0) = (fx as i64, fy as i64);
    let p00 = img.get_clamped(x0, y0);
    let p10 = img.get_clamped(x0 + 1, y0);
    let p01 = img.get_clamped(x0, y0 + 1);
    let p11 = img.get_clamped(x0 + 1, y0 + 1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - ax) + p10[c] as f64 * ax;
        let bottom = p01[c] as f64 * (1.0 - ax) + p11[c] as f64 * ax;
        out[c] = top * (1.0 - ay) + bottom * ay;
    }
    out
}

/// Warps `img` by `m`, which maps source pixel indices to output pixel
/// indices. Each output pixel is inverse-mapped and sampled bilinearly.
pub fn warp_affine(img: &ImageBuffer, m: &AffineMap, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidImage(format!("empty warp target {out_w}x{out_h}")));
    }
    let inv = m.inverse()?;
    Ok(ImageBuffer::from_fn(out_w, out_h, |u, v| {
        let (sx, sy) = inv.apply(u as f64, v as f64);
        sample_bilinear(img, sx, sy).map(quantize)
    }))
}

/// Resizes `img` to `out_w×out_h` with pixel-center alignment.
pub fn resize(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    let m = AffineMap::scale(out_w as f64 / img.width as f64, out_h as f64 / img.height as f64);
    warp_affine(img, &m.to_pixel_index(), out_w, out_h)
}

/// Square convolution kernel of odd size.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size < 3 || size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("size {size} must be odd and >= 3")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Kernel { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, col: usize, row: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

/// Per-channel 2-D convolution with edge-replicated borders.
pub fn convolve(img: &ImageBuffer, k: &Kernel) -> ImageBuffer {
    let r = (k.size / 2) as i64;
    let taps: Vec<(i64, i64, f64)> = (0..k.size)
        .flat_map(|row| (0..k.size).map(move |col| (col, row)))
        .filter_map(|(col, row)| {
            let w = k.weight(col, row);
            (w != 0.0).then_some((col as i64 - r, row as i64 - r, w))
        })
        .collect();
    ImageBuffer::from_fn(img.width, img.height, |x, y| {
        let mut acc = [0.0f64; 3];
        for &(dx, dy, w) in &taps {
            let p = img.get_clamped(x as i64 + dx, y as i64 + dy);
            for c in 0..3 {
                acc[c] += w * p[c] as f64;
            }
        }
        acc.map(quantize)
    })
}

/// Per-pixel blend weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMask {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl AlphaMask {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} alpha values for a {width}x{height} mask",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidImage(format!("alpha value {bad} outside [0, 1]")));
        }
        Ok(AlphaMask { width, height, alpha })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn complement(&self) -> AlphaMask {
        AlphaMask {
            width: self.width,
            height: self.height,
            alpha: self.alpha.iter().map(|a| 1.0 - a).collect(),
        }
    }
}

/// Blends `src` over `dst` with its top-left at `at`. Parts that fall outside
/// `dst` are dropped.
pub fn composite(dst: &ImageBuffer, src: &ImageBuffer, mask: &AlphaMask, at: (i64, i64)) -> Result<ImageBuffer> {
    if src.width != mask.width || src.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "source {}x{} vs mask {}x{}",
            src.width, src.height, mask.width, mask.height
        )));
    }
    let mut out = dst.clone();
    for sy in 0..src.height {
        let dy = at.1 + sy as i64;
        if dy < 0 || dy >= dst.height as i64 {
            continue;
        }
        for sx in 0..src.width {
            let dx = at.0 + sx as i64;
            if dx < 0 || dx >= dst.width as i64 {
                continue;
            }
            let a = mask.get(sx, sy);
            let s = src.get(sx, sy);
            let d = dst.get(dx as usize, dy as usize);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = quantize(a * s[c] as f64 + (1.0 - a) * d[c] as f64);
            }
            out.set(dx as usize, dy as usize, px);
        }
    }
    Ok(out)
}

/// 8×8×8 joint RGB histogram, L1-normalized.
pub fn color_histogram(img: &ImageBuffer) -> Vec<f64> {
    let mut hist = vec![0.0; HISTOGRAM_BINS];
    for p in img.pixels.chunks_exact(3) {
        let bin = ((p[0] >> 5) as usize) * 64 + ((p[1] >> 5) as usize) * 8 + (p[2] >> 5) as usize;
        hist[bin] += 1.0;
    }
    let n = (img.width * img.height) as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

/// Euclidean distance between two feature vectors.
pub fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
