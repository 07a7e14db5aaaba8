//! Baseline trackers: a MOSSE-style correlation filter learned in the
//! frequency domain, and an exhaustive zero-normalized cross-correlation
//! template matcher.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::imaging::ImageBuffer;

/// Half-width of the region around the peak excluded from the sidelobe.
const PSR_EXCLUSION: i64 = 5;
const MIN_WINDOW: usize = 8;

/// 2-D FFT over a row-major `width × height` buffer.
#[derive(Clone)]
pub struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2d({}x{})", self.width, self.height)
    }
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.width * self.height);
        for row in data.chunks_exact_mut(self.width) {
            rows.process(row);
        }
        let mut col = vec![Complex64::default(); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = data[y * self.width + x];
            }
            cols.process(&mut col);
            for y in 0..self.height {
                data[y * self.width + x] = col[y];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform, normalized so `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let n = (self.width * self.height) as f64;
        data.iter_mut().for_each(|v| *v /= n);
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Circular cross-correlation `r(dx, dy) = Σ a(x, y) · b(x + dx, y + dy)`
/// computed through the FFT.
pub fn cross_correlate_fft(a: &[f64], b: &[f64], width: usize, height: usize) -> Vec<f64> {
    let fft = Fft2d::new(width, height);
    let fa = fft.forward_real(a);
    let fb = fft.forward_real(b);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft.inverse(&mut prod);
    prod.into_iter().map(|c| c.re).collect()
}

/// Hann taper of the given size.
fn hann(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0; n];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub lambda: f64,
    pub learning_rate: f64,
    /// Search window side relative to the target box.
    pub window_scale: f64,
    /// Gaussian response width relative to the box diagonal, at least 1 px.
    pub sigma_factor: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { lambda: 1e-2, learning_rate: 0.08, window_scale: 2.5, sigma_factor: 0.03 }
    }
}

/// Per-channel MOSSE filter over a fixed-size window around the target.
#[derive(Debug, Clone)]
pub struct CorrelationFilter {
    params: FilterParams,
    win_w: usize,
    win_h: usize,
    fft: Fft2d,
    taper: Vec<f64>,
    target_response: Vec<Complex64>,
    numerators: Vec<Vec<Complex64>>,
    denominators: Vec<Vec<f64>>,
    target_size: (f64, f64),
    center: (f64, f64),
}

/// Output of one tracking step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub bbox: BoundingBox,
    pub psr: f64,
}

impl CorrelationFilter {
    /// Learns a filter from `frame` with the target at `bbox`.
    pub fn init(frame: &ImageBuffer, bbox: &BoundingBox, params: FilterParams) -> Result<Self> {
        if !bbox.is_valid() || bbox.w < 1.0 || bbox.h < 1.0 {
            return Err(Error::InvalidBox(format!("degenerate target {bbox:?}")));
        }
        if params.lambda.is_nan() || params.lambda <= 0.0 || !(0.0..=1.0).contains(&params.learning_rate) || params.learning_rate == 0.0 {
            return Err(Error::Config(format!("invalid filter parameters {params:?}")));
        }
        let win_w = ((bbox.w * params.window_scale).round() as usize).max(MIN_WINDOW);
        let win_h = ((bbox.h * params.window_scale).round() as usize).max(MIN_WINDOW);
        let (tw, th) = (hann(win_w), hann(win_h));
        let taper: Vec<f64> = th.iter().flat_map(|ty| tw.iter().map(move |t| t * ty)).collect();
        let fft = Fft2d::new(win_w, win_h);

        let sigma = (params.sigma_factor * bbox.w.hypot(bbox.h)).max(1.0);
        let (pcx, pcy) = ((win_w / 2) as f64, (win_h / 2) as f64);
        let gauss: Vec<f64> = (0..win_h)
            .flat_map(|y| {
                (0..win_w).map(move |x| {
                    let d2 = (x as f64 - pcx).powi(2) + (y as f64 - pcy).powi(2);
                    (-d2 / (2.0 * sigma * sigma)).exp()
                })
            })
            .collect();
        let target_response = fft.forward_real(&gauss);

        let mut f = CorrelationFilter {
            params,
            win_w,
            win_h,
            fft,
            taper,
            target_response,
            numerators: Vec::new(),
            denominators: Vec::new(),
            target_size: (bbox.w, bbox.h),
            center: bbox.center(),
        };
        let (num, den) = f.train_terms(frame);
        f.numerators = num;
        f.denominators = den;
        Ok(f)
    }

    pub fn window_size(&self) -> (usize, usize) {
        (self.win_w, self.win_h)
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::from_center(self.center.0, self.center.1, self.target_size.0, self.target_size.1)
            .expect("target size is positive")
    }

    /// Gaussian regression target in the spatial domain.
    pub fn target_response(&self) -> Vec<f64> {
        let mut buf = self.target_response.clone();
        self.fft.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Smallest denominator entry; never below λ.
    pub fn min_denominator(&self) -> f64 {
        self.denominators.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Frobenius norm of the filter spectra `A / B`.
    pub fn filter_norm(&self) -> f64 {
        self.numerators
            .iter()
            .zip(&self.denominators)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x / y).norm_sqr()))
            .sum::<f64>()
            .sqrt()
    }

    /// Top-left of the window centered on `center` in frame pixels.
    fn window_origin(&self, center: (f64, f64)) -> (i64, i64) {
        (
            (center.0 - 0.5 - (self.win_w / 2) as f64).round() as i64,
            (center.1 - 0.5 - (self.win_h / 2) as f64).round() as i64,
        )
    }

    /// Zero-mean, unit-norm, tapered channel planes.
    fn features(&self, frame: &ImageBuffer, center: (f64, f64)) -> Vec<Vec<Complex64>> {
        let (x0, y0) = self.window_origin(center);
        let win = frame.crop_replicate(x0, y0, self.win_w, self.win_h);
        (0..3)
            .map(|c| {
                let mut plane: Vec<f64> = win.pixels().chunks_exact(3).map(|p| p[c] as f64 / 255.0).collect();
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                plane.iter_mut().for_each(|v| *v -= mean);
                let norm = plane.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    plane.iter_mut().for_each(|v| *v /= norm);
                }
                plane.iter_mut().zip(&self.taper).for_each(|(v, t)| *v *= t);
                self.fft.forward_real(&plane)
            })
            .collect()
    }

    fn train_terms(&self, frame: &ImageBuffer) -> (Vec<Vec<Complex64>>, Vec<Vec<f64>>) {
        let feats = self.features(frame, self.center);
        let num = feats
            .iter()
            .map(|f| f.iter().zip(&self.target_response).map(|(fi, gi)| gi * fi.conj()).collect())
            .collect();
        let den = feats
            .iter()
            .map(|f| f.iter().map(|fi| fi.norm_sqr() + self.params.lambda).collect())
            .collect();
        (num, den)
    }

    /// Spatial response of the filter on the window centered at `center`.
    pub fn response(&self, frame: &ImageBuffer, center: (f64, f64)) -> Vec<f64> {
        let feats = self.features(frame, center);
        let n = self.win_w * self.win_h;
        let mut acc = vec![Complex64::default(); n];
        for ((f, a), b) in feats.iter().zip(&self.numerators).zip(&self.denominators) {
            for i in 0..n {
                acc[i] += f[i] * (a[i] / b[i]);
            }
        }
        self.fft.inverse(&mut acc);
        acc.into_iter().map(|c| c.re / 3.0).collect()
    }

    /// Argmax position and peak-to-sidelobe ratio of a response map.
    pub fn peak(&self, response: &[f64]) -> ((usize, usize), f64) {
        let (idx, &peak) = response
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty response");
        let (px, py) = ((idx % self.win_w) as i64, (idx / self.win_w) as i64);
        let side: Vec<f64> = response
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (x, y) = ((*i % self.win_w) as i64, (*i / self.win_w) as i64);
                (x - px).abs() > PSR_EXCLUSION || (y - py).abs() > PSR_EXCLUSION
            })
            .map(|(_, v)| *v)
            .collect();
        let psr = if side.len() < 2 {
            0.0
        } else {
            let mean = side.iter().sum::<f64>() / side.len() as f64;
            let var = side.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / side.len() as f64;
            (peak - mean) / var.sqrt().max(1e-12)
        };
        ((px as usize, py as usize), psr)
    }

    /// Displacement of the response peak from the window center, refined to
    /// sub-pixel precision with a parabola through the peak's neighbours.
    fn locate(&self, frame: &ImageBuffer, center: (f64, f64)) -> ((f64, f64), f64) {
        let response = self.response(frame, center);
        let ((px, py), psr) = self.peak(&response);
        let (w, h) = (self.win_w, self.win_h);
        let at = |x: usize, y: usize| response[(y % h) * w + (x % w)];
        let parabola = |l: f64, c: f64, r: f64| {
            let denom = l - 2.0 * c + r;
            if denom.abs() > 1e-12 {
                (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        let sub_x = parabola(at(px + w - 1, py), at(px, py), at(px + 1, py));
        let sub_y = parabola(at(px, py + h - 1), at(px, py), at(px, py + 1));
        let wrap = |p: usize, n: usize| {
            let d = p as i64 - (n / 2) as i64;
            if d > n as i64 / 2 {
                d - n as i64
            } else if d < -(n as i64) / 2 {
                d + n as i64
            } else {
                d
            }
        };
        ((wrap(px, w) as f64 + sub_x, wrap(py, h) as f64 + sub_y), psr)
    }

    /// Locates the target in `frame` near the current position, moves there
    /// and blends the new appearance into the filter. A second detection at
    /// the new position removes the pull of the window taper toward the
    /// old center.
    pub fn track(&mut self, frame: &ImageBuffer) -> TrackStep {
        let clamp = |c: (f64, f64)| (c.0.clamp(0.0, frame.width() as f64), c.1.clamp(0.0, frame.height() as f64));
        let ((dx, dy), psr) = self.locate(frame, self.center);
        let moved = clamp((self.center.0 + dx, self.center.1 + dy));
        let ((rx, ry), _) = self.locate(frame, moved);
        self.center = if rx.abs() <= 1.0 && ry.abs() <= 1.0 { clamp((moved.0 + rx, moved.1 + ry)) } else { moved };
        let (num, den) = self.train_terms(frame);
        let lr = self.params.learning_rate;
        for (old, new) in self.numerators.iter_mut().zip(num) {
            old.iter_mut().zip(new).for_each(|(o, n)| *o = n * lr + *o * (1.0 - lr));
        }
        for (old, new) in self.denominators.iter_mut().zip(den) {
            old.iter_mut().zip(new).for_each(|(o, n)| *o = n * lr + *o * (1.0 - lr));
        }
        TrackStep { bbox: self.bbox(), psr }
    }
}

/// Runs the filter over `frames`, initialized on the first with `init`.
/// The first output is `init` itself.
pub fn track_sequence(
    frames: impl IntoIterator<Item = Result<ImageBuffer>>,
    init: &BoundingBox,
    params: FilterParams,
) -> Result<Vec<BoundingBox>> {
    let mut it = frames.into_iter();
    let first = it.next().ok_or_else(|| Error::Empty("sequence has no frames".into()))??;
    let mut filter = CorrelationFilter::init(&first, init, params)?;
    let mut out = vec![*init];
    for frame in it {
        out.push(filter.track(&frame?).bbox);
    }
    Ok(out)
}

/// Exhaustive zero-normalized cross-correlation of `template` over every
/// placement inside `search`. Returns the best box and its score.
pub fn ncc_track(template: &ImageBuffer, frame: &ImageBuffer, search: &BoundingBox) -> Result<(BoundingBox, f64)> {
    let sx0 = search.x.round().max(0.0) as usize;
    let sy0 = search.y.round().max(0.0) as usize;
    let sx1 = (search.right().round().max(0.0) as usize).min(frame.width());
    let sy1 = (search.bottom().round().max(0.0) as usize).min(frame.height());
    let (tw, th) = (template.width(), template.height());
    if sx1 < sx0 + tw || sy1 < sy0 + th {
        return Err(Error::TemplateTooLarge);
    }
    let t: Vec<f64> = template.pixels().iter().map(|&v| v as f64).collect();
    let t_mean = t.iter().sum::<f64>() / t.len() as f64;
    let t_c: Vec<f64> = t.iter().map(|v| v - t_mean).collect();
    let t_norm = t_c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm < 1e-9 {
        return Err(Error::ZeroVarianceTemplate);
    }
    let n = t.len() as f64;
    let mut best = (f64::NEG_INFINITY, sx0, sy0);
    for y in sy0..=sy1 - th {
        for x in sx0..=sx1 - tw {
            let (mut sum, mut sum_sq, mut dot) = (0.0, 0.0, 0.0);
            let mut k = 0;
            for ty in 0..th {
                let row = ((y + ty) * frame.width() + x) * 3;
                for &v in &frame.pixels()[row..row + tw * 3] {
                    let v = v as f64;
                    sum += v;
                    sum_sq += v * v;
                    dot += v * t_c[k];
                    k += 1;
                }
            }
            let var = sum_sq - sum * sum / n;
            let score = if var > 1e-9 { dot / (var.sqrt() * t_norm) } else { 0.0 };
            if score > best.0 {
                best = (score, x, y);
            }
        }
    }
    let b = BoundingBox::new(best.1 as f64, best.2 as f64, tw as f64, th as f64)?;
    Ok((b, best.0))
}
