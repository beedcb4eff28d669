use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place 2-D FFT over a row-major `h x w` buffer: rows first, then
/// columns. The inverse is unnormalized; callers divide by `h * w`.
pub(crate) fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Signed frequency of bin `i` out of `n`, in cycles per sample (numpy's
/// `fftfreq`).
pub(crate) fn fftfreq(i: usize, n: usize) -> f64 {
    let k = if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    };
    k / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let (h, w) = (5, 6);
        let orig: Vec<Complex64> = (0..h * w)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), 0.0))
            .collect();
        let mut buf = orig.clone();
        fft2(&mut buf, h, w, false);
        fft2(&mut buf, h, w, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a / (h * w) as f64 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let (h, w) = (4, 4);
        let mut buf = vec![Complex64::default(); h * w];
        buf[5] = Complex64::new(1.0, 0.0);
        fft2(&mut buf, h, w, false);
        assert!(buf.iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn frequencies() {
        let f: Vec<f64> = (0..5).map(|i| fftfreq(i, 5)).collect();
        assert_eq!(f, [0.0, 0.2, 0.4, -0.4, -0.2]);
        let g: Vec<f64> = (0..4).map(|i| fftfreq(i, 4)).collect();
        assert_eq!(g, [0.0, 0.25, -0.5, -0.25]);
    }
}
