//! FMix masks: threshold a random low-frequency field.
//!
//! A complex Gaussian spectrum is attenuated by `1 / max(f, 1/max(h,w))^decay`
//! (`f` the radial frequency in cycles per pixel), transformed back to the
//! image plane, and the largest `round_half_even(λ·h·w)` values of the real
//! part become ones. Equal field values are ordered by pixel index.

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::cutmix::check_lambda;
use super::fft::{fft2, fftfreq};
use super::Mask;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub const DEFAULT_DECAY: f64 = 3.0;

/// Low-frequency random field (real part of the inverse transform).
pub fn low_frequency_field(h: usize, w: usize, decay: f64, stream: &mut SeedStream) -> Vec<f64> {
    let floor = 1.0 / h.max(w) as f64;
    let mut spectrum = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = fftfreq(y, h);
        for x in 0..w {
            let fx = fftfreq(x, w);
            let f = (fx * fx + fy * fy).sqrt().max(floor);
            let scale = 1.0 / f.powf(decay);
            let re: f64 = StandardNormal.sample(stream.rng());
            let im: f64 = StandardNormal.sample(stream.rng());
            spectrum.push(Complex64::new(re * scale, im * scale));
        }
    }
    fft2(&mut spectrum, h, w, true);
    spectrum.iter().map(|c| c.re).collect()
}

/// Mask with the top `count` entries of `field` set to one.
pub fn threshold_top(h: usize, w: usize, field: &[f64], count: usize) -> Mask {
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut data = vec![0u8; h * w];
    for &i in &order[..count] {
        data[i] = 1;
    }
    Mask::new(h, w, data)
}

pub fn ones_for(h: usize, w: usize, lambda: f64) -> usize {
    (lambda * (h * w) as f64).round_ties_even() as usize
}

pub fn fmix_mask(
    h: usize,
    w: usize,
    lambda: f64,
    decay: f64,
    stream: &mut SeedStream,
) -> Result<Mask> {
    check_lambda(lambda)?;
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(Error::invalid(format!(
            "decay must be positive, got {decay}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let field = low_frequency_field(h, w, decay, stream);
    Ok(threshold_top(h, w, &field, ones_for(h, w, lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let mut s = SeedStream::new(0);
        assert_eq!(fmix_mask(8, 9, 0.0, 3.0, &mut s).unwrap().ones(), 0);
        assert_eq!(fmix_mask(8, 9, 1.0, 3.0, &mut s).unwrap().ones(), 72);
    }

    #[test]
    fn exact_count() {
        let mut s = SeedStream::new(4);
        let m = fmix_mask(64, 64, 0.5, 3.0, &mut s).unwrap();
        assert_eq!(m.ones(), 2048);
        // 0.5 * 5 = 2.5 rounds to even
        assert_eq!(ones_for(1, 5, 0.5), 2);
        assert_eq!(ones_for(1, 7, 0.5), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = fmix_mask(16, 16, 0.3, 3.0, &mut SeedStream::new(11)).unwrap();
        let b = fmix_mask(16, 16, 0.3, 3.0, &mut SeedStream::new(11)).unwrap();
        let c = fmix_mask(16, 16, 0.3, 3.0, &mut SeedStream::new(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_parameters() {
        let mut s = SeedStream::new(0);
        assert!(fmix_mask(4, 4, 0.5, 0.0, &mut s).is_err());
        assert!(fmix_mask(4, 4, 2.0, 3.0, &mut s).is_err());
    }

    #[test]
    fn threshold_ties_by_index() {
        let m = threshold_top(1, 4, &[1.0, 2.0, 1.0, 1.0], 2);
        assert_eq!(m.data(), &[1, 1, 0, 0]);
    }
}
