//! Spectral-residual saliency.
//!
//! 1. Average channels to grayscale.
//! 2. FFT; split into log-amplitude and phase.
//! 3. Residual (amplitudes floored at 1e-3 of their mean) = log-amplitude minus its 3x3 local mean (circular).
//! 4. Inverse FFT of `exp(residual + i·phase)`, squared magnitude.
//! 5. Gaussian smoothing (σ = 1.5, radius 3, edge-clamped).
//!
//! A constant image has no spectral structure and yields an all-zero map.

use rustfft::num_complex::Complex64;

use super::fft::fft2;
use super::ImageTensor;

pub const SMOOTHING_RADIUS: usize = 3;
pub const SMOOTHING_SIGMA: f64 = 1.5;

/// Amplitude floor as a fraction of the mean spectral amplitude. Synthetic
/// images (flat backgrounds, box shapes) have exactly-zero frequency bins;
/// an absolute floor would put those at ln ≈ -27 and the local mean would
/// then inflate the residual of every neighbouring bin.
const AMPLITUDE_FLOOR: f64 = 1e-3;

pub fn grayscale(image: &ImageTensor) -> Vec<f64> {
    let c = image.channels();
    image
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
        .collect()
}

/// Row-major saliency map with the image's height and width.
pub fn saliency_map(image: &ImageTensor) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let gray = grayscale(image);
    let first = gray[0];
    if gray.iter().all(|&v| v == first) {
        return vec![0.0; h * w];
    }

    let mut spectrum: Vec<Complex64> = gray.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, h, w, false);
    let floor = AMPLITUDE_FLOOR * spectrum.iter().map(|c| c.norm()).sum::<f64>() / (h * w) as f64;
    let log_amp: Vec<f64> = spectrum.iter().map(|c| (c.norm() + floor).ln()).collect();
    let local_mean = box_mean_wrapped(&log_amp, h, w);
    for (i, c) in spectrum.iter_mut().enumerate() {
        let residual = log_amp[i] - local_mean[i];
        *c = Complex64::from_polar(residual.exp(), c.arg());
    }
    fft2(&mut spectrum, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let energy: Vec<f64> = spectrum.iter().map(|c| (c * scale).norm_sqr()).collect();
    gaussian_smooth(&energy, h, w)
}

/// Location of the strongest saliency, ties resolved in row-major order.
pub fn saliency_peak(image: &ImageTensor) -> (usize, usize) {
    let map = saliency_map(image);
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    (best / image.width(), best % image.width())
}

fn box_mean_wrapped(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in [h - 1, 0, 1] {
                for dx in [w - 1, 0, 1] {
                    sum += values[((y + dy) % h) * w + (x + dx) % w];
                }
            }
            out[y * w + x] = sum / 9.0;
        }
    }
    out
}

fn gaussian_kernel() -> Vec<f64> {
    let r = SMOOTHING_RADIUS as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * SMOOTHING_SIGMA * SMOOTHING_SIGMA)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with replicated edges.
fn gaussian_smooth(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let kernel = gaussian_kernel();
    let r = SMOOTHING_RADIUS as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * values[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}
