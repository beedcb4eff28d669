//! Mix augmentation driven by the scarcity-weighted sampler.
//!
//! Every method produces a binary mask `M`; the mixed image is
//! `x_i·M + x_j·(1-M)` and the mixed label uses the realized mask mean
//! `λ_eff = ones / (h·w)` rather than the drawn λ, so image and label always
//! agree even after box clipping or count rounding.

pub mod cutmix;
mod fft;
pub mod fmix;
pub mod image_io;
pub mod lambda;
pub mod saliency;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub use cutmix::{box_at, box_mask, cut_size, cutmix_box, CutBox};
pub use fmix::{fmix_mask, DEFAULT_DECAY};
pub use lambda::{sample_lambda, DEFAULT_ALPHA};
pub use saliency::{saliency_map, saliency_peak};

/// Interleaved `h x w x c` image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    fn same_shape(&self, other: &ImageTensor) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }
}

/// Binary `h x w` mask; 1 selects the first image of the pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub(crate) fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|&v| v <= 1));
        Mask {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask::new(height, width, vec![value as u8; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of ones, `ones / (h·w)`.
    pub fn mean(&self) -> f64 {
        self.ones() as f64 / self.data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    CutMix,
    FMix,
    SaliencyMix,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CutMix => "cutmix",
            Method::FMix => "fmix",
            Method::SaliencyMix => "saliencymix",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cutmix" => Ok(Method::CutMix),
            "fmix" => Ok(Method::FMix),
            "saliencymix" => Ok(Method::SaliencyMix),
            other => Err(Error::invalid(format!(
                "unknown method {other:?} (expected cutmix, fmix or saliencymix)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub method: Method,
    pub alpha: f64,
    pub decay: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            method: Method::CutMix,
            alpha: DEFAULT_ALPHA,
            decay: DEFAULT_DECAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub method: Method,
    pub lambda: f64,
    pub lambda_effective: f64,
    pub mask: Mask,
    pub pair: (usize, usize),
    pub cut_box: Option<CutBox>,
    pub label_coeffs: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub image: ImageTensor,
    pub label: Vec<f64>,
    pub plan: MixPlan,
}

const LABEL_SUM_TOL: f64 = 1e-6;

fn check_label(label: &[f64], name: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if label.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = label.iter().sum();
    if (sum - 1.0).abs() > LABEL_SUM_TOL {
        return Err(Error::invalid(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Blends a pair through `mask`. Labels are mixed with the mask mean.
pub fn mix_with_mask(
    image_i: &ImageTensor,
    image_j: &ImageTensor,
    label_i: &[f64],
    label_j: &[f64],
    mask: &Mask,
) -> Result<(ImageTensor, Vec<f64>, f64)> {
    if !image_i.same_shape(image_j) {
        return Err(Error::invalid(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            image_i.height,
            image_i.width,
            image_i.channels,
            image_j.height,
            image_j.width,
            image_j.channels
        )));
    }
    if (mask.height, mask.width) != (image_i.height, image_i.width) {
        return Err(Error::invalid("mask shape differs from image shape"));
    }
    check_label(label_i, "label_i")?;
    check_label(label_j, "label_j")?;
    if label_i.len() != label_j.len() {
        return Err(Error::invalid("labels cover different class sets"));
    }

    let c = image_i.channels;
    let data = image_i
        .data
        .chunks_exact(c)
        .zip(image_j.data.chunks_exact(c))
        .zip(&mask.data)
        .flat_map(|((a, b), &m)| if m == 1 { a } else { b }.iter().copied())
        .collect();
    let image = ImageTensor {
        height: image_i.height,
        width: image_i.width,
        channels: c,
        data,
    };
    let lam = mask.mean();
    let label = label_i
        .iter()
        .zip(label_j)
        .map(|(a, b)| lam * a + (1.0 - lam) * b)
        .collect();
    Ok((image, label, lam))
}

/// Draws λ, builds the method's mask and mixes the pair.
pub fn make_mix(
    config: &MixConfig,
    image_i: &ImageTensor,
    image_j: &ImageTensor,
    label_i: &[f64],
    label_j: &[f64],
    pair: (usize, usize),
    stream: &mut SeedStream,
) -> Result<Mixed> {
    if !image_i.same_shape(image_j) {
        return Err(Error::invalid("image shapes differ"));
    }
    let (h, w) = (image_i.height, image_i.width);
    let lambda = sample_lambda(config.alpha, stream)?;
    let (mask, cut_box) = match config.method {
        Method::CutMix => {
            let b = cutmix_box(h, w, lambda, stream)?;
            (box_mask(h, w, &b), Some(b))
        }
        Method::FMix => (fmix_mask(h, w, lambda, config.decay, stream)?, None),
        Method::SaliencyMix => {
            // the pasted patch comes from image_j, around its most salient pixel
            let center = saliency_peak(image_j);
            let b = box_at(h, w, cut_size(h, w, lambda), center);
            (box_mask(h, w, &b), Some(b))
        }
    };
    let (image, label, lam) = mix_with_mask(image_i, image_j, label_i, label_j, &mask)?;
    Ok(Mixed {
        image,
        label,
        plan: MixPlan {
            method: config.method,
            lambda,
            lambda_effective: lam,
            mask,
            pair,
            cut_box,
            label_coeffs: (lam, 1.0 - lam),
        },
    })
}

/// Shuffles `batch` and pairs element `k` with element `(k + n/2) mod n`.
/// Returns one pair per batch element.
pub fn pair_batch(batch: &[usize], stream: &mut SeedStream) -> Vec<(usize, usize)> {
    let mut shuffled = batch.to_vec();
    shuffled.shuffle(stream.rng());
    let n = shuffled.len();
    (0..n)
        .map(|k| (shuffled[k], shuffled[(k + n / 2) % n]))
        .collect()
}

/// One line of the plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub pair: (String, String),
    pub method: Method,
    pub lambda: f64,
    pub lambda_eff: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub cut_box: Option<[usize; 4]>,
    pub seed: u64,
}

impl PlanRecord {
    pub fn new(plan: &MixPlan, ids: (&str, &str), seed: u64) -> Self {
        PlanRecord {
            pair: (ids.0.to_string(), ids.1.to_string()),
            method: plan.method,
            lambda: plan.lambda,
            lambda_eff: plan.lambda_effective,
            cut_box: plan.cut_box.map(|b| b.as_array()),
            seed,
        }
    }
}
