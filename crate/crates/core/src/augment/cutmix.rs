use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`, already clipped to the
/// image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..self.y1).contains(&row) && (self.x0..self.x1).contains(&col)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Unclipped cut size `(height, width)`: each side scaled by √(1-λ) and
/// rounded half away from zero.
pub fn cut_size(h: usize, w: usize, lambda: f64) -> (usize, usize) {
    let ratio = (1.0 - lambda).sqrt();
    (
        (h as f64 * ratio).round() as usize,
        (w as f64 * ratio).round() as usize,
    )
}

/// Box of size `cut` centered at `(cy, cx)` and clipped to `h x w`. The
/// top-left corner sits at `center - size / 2` (integer division).
pub fn box_at(h: usize, w: usize, cut: (usize, usize), center: (usize, usize)) -> CutBox {
    let (cut_h, cut_w) = cut;
    let (cy, cx) = center;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let y0 = cy as i64 - (cut_h / 2) as i64;
    let x0 = cx as i64 - (cut_w / 2) as i64;
    CutBox {
        x0: clip(x0, w),
        y0: clip(y0, h),
        x1: clip(x0 + cut_w as i64, w),
        y1: clip(y0 + cut_h as i64, h),
    }
}

/// CutMix box: size from `cut_size`, center uniform over the pixel grid.
pub fn cutmix_box(h: usize, w: usize, lambda: f64, stream: &mut SeedStream) -> Result<CutBox> {
    check_lambda(lambda)?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let cy = stream.below(h);
    let cx = stream.below(w);
    Ok(box_at(h, w, cut_size(h, w, lambda), (cy, cx)))
}

/// Ones everywhere except inside the box.
pub fn box_mask(h: usize, w: usize, cut: &CutBox) -> Mask {
    let mut data = vec![1u8; h * w];
    for y in cut.y0..cut.y1 {
        data[y * w + cut.x0..y * w + cut.x1].fill(0);
    }
    Mask::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_one_is_empty() {
        let mut s = SeedStream::new(0);
        for _ in 0..20 {
            assert!(cutmix_box(17, 23, 1.0, &mut s).unwrap().is_empty());
        }
    }

    #[test]
    fn lambda_zero_centered_covers_everything() {
        for (h, w) in [(32, 32), (5, 7), (1, 1), (6, 3)] {
            let b = box_at(h, w, cut_size(h, w, 0.0), (h / 2, w / 2));
            assert_eq!(
                b,
                CutBox {
                    x0: 0,
                    y0: 0,
                    x1: w,
                    y1: h
                }
            );
        }
    }

    #[test]
    fn area_law_over_all_centers() {
        let (h, w) = (32, 32);
        let cut = cut_size(h, w, 0.75);
        assert_eq!(cut, (16, 16));
        let mut unclipped = 0;
        for cy in 0..h {
            for cx in 0..w {
                let b = box_at(h, w, cut, (cy, cx));
                assert!(b.x1 <= w && b.y1 <= h && b.x0 <= b.x1 && b.y0 <= b.y1);
                assert!(b.area() <= 256);
                let inside = cy >= 8 && cy + 8 <= h && cx >= 8 && cx + 8 <= w;
                if inside {
                    assert_eq!(b.area(), 256);
                    unclipped += 1;
                }
            }
        }
        assert_eq!(unclipped, 17 * 17);
    }

    #[test]
    fn mask_zero_inside_box() {
        let b = CutBox {
            x0: 1,
            y0: 0,
            x1: 3,
            y1: 2,
        };
        let m = box_mask(3, 4, &b);
        assert_eq!(m.data(), &[1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(m.ones(), 8);
    }

    #[test]
    fn bad_lambda() {
        let mut s = SeedStream::new(0);
        assert!(cutmix_box(4, 4, 1.5, &mut s).is_err());
        assert!(cutmix_box(4, 4, -0.1, &mut s).is_err());
    }
}
