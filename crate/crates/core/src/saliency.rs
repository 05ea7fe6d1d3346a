//! Spectral-residual saliency and max-pool downsampling.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::SaliencyGrid;
use crate::raster::{resize_plane, Raster};
use crate::{Error, Result};

/// Side length of the square working grid.
pub const WORKING_SIZE: usize = 64;
const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaliencyParams {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            radius: 8,
        }
    }
}

/// Saliency values in [0, 1] at image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency map {height}x{width} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("saliency value outside [0,1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn to_raster(&self) -> Raster {
        Raster::new(self.height, self.width, 1, self.values.clone()).expect("valid map")
    }
}

pub fn spectral_residual(image: &Raster) -> Result<SaliencyMap> {
    spectral_residual_with(image, SaliencyParams::default())
}

pub fn spectral_residual_with(image: &Raster, params: SaliencyParams) -> Result<SaliencyMap> {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::invalid("zero-sized image"));
    }
    let n = WORKING_SIZE;
    let gray = image.luminance();
    let work = resize_plane(gray.data(), h, w, n, n);

    let (lo, hi) = min_max(&work);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return SaliencyMap::new(h, w, vec![0.0; h * w]);
    }

    let mut spectrum: Vec<Complex<f64>> = work.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft2d(&mut spectrum, n, &mut planner, false);

    let log_amp: Vec<f64> = spectrum.iter().map(|c| (c.norm() + LOG_EPS).ln()).collect();
    let phase: Vec<f64> = spectrum.iter().map(|c| c.im.atan2(c.re)).collect();
    let smoothed = box_mean3(&log_amp, n, n);

    let mut residual: Vec<Complex<f64>> = log_amp
        .iter()
        .zip(&smoothed)
        .zip(&phase)
        .map(|((l, m), p)| Complex::from_polar((l - m).exp(), *p))
        .collect();
    fft2d(&mut residual, n, &mut planner, true);
    let scale = 1.0 / (n * n) as f64;
    let energy: Vec<f64> = residual.iter().map(|c| (c * scale).norm_sqr()).collect();

    let blurred = gaussian_blur(&energy, n, n, params.sigma, params.radius);
    let normalized = min_max_normalize(&blurred);
    let mut back = resize_plane(&normalized, n, n, h, w);
    for v in &mut back {
        *v = v.clamp(0.0, 1.0);
    }
    SaliencyMap::new(h, w, back)
}

fn fft2d(buf: &mut [Complex<f64>], n: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// 3×3 mean; edge cells average only the neighbors that exist.
pub(crate) fn box_mean3(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for ii in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for jj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    sum += src[ii * w + jj];
                    count += 1.0;
                }
            }
            out[i * w + j] = sum / count;
        }
    }
    out
}

/// Separable Gaussian; taps falling outside the grid are dropped and the rest renormalized.
pub(crate) fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (pos, len) = if along_rows { (j, w) } else { (i, h) };
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (t, k) in taps.iter().zip(-r..=r) {
                    let q = pos as isize + k;
                    if q < 0 || q >= len as isize {
                        continue;
                    }
                    let q = q as usize;
                    let v = if along_rows { src[i * w + q] } else { src[q * w + j] };
                    acc += t * v;
                    norm += t;
                }
                out[i * w + j] = acc / norm;
            }
        }
        out
    };
    let tmp = pass(src, true);
    pass(&tmp, false)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Constant fields map to zeros.
fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(v);
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / span).collect()
}

/// Max-pools `map` to `out_h`×`out_w`. Sizes that are not whole multiples are first
/// resized bilinearly to the smallest multiple at or above the input size.
pub fn downsample_max(map: &SaliencyMap, out_h: usize, out_w: usize) -> Result<SaliencyGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("target grid {out_h}x{out_w}")));
    }
    let (h, w) = (map.height(), map.width());
    let th = h.div_ceil(out_h) * out_h;
    let tw = w.div_ceil(out_w) * out_w;
    let src = if th == h && tw == w {
        map.values().to_vec()
    } else {
        resize_plane(map.values(), h, w, th, tw)
    };
    let (bh, bw) = (th / out_h, tw / out_w);
    let mut out = vec![0.0f64; out_h * out_w];
    for i in 0..th {
        for j in 0..tw {
            let cell = &mut out[(i / bh) * out_w + j / bw];
            *cell = cell.max(src[i * tw + j]);
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    SaliencyGrid::new(out_h, out_w, out)
}

/// Saliency grid at 8× the feature resolution, straight from an image.
pub fn saliency_grid_for(image: &Raster, feat_h: usize, feat_w: usize) -> Result<SaliencyGrid> {
    let map = spectral_residual(image)?;
    downsample_max(&map, 8 * feat_h, 8 * feat_w)
}
