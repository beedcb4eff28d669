//! PNG/PPM decoding into [0,1] tensors and 8-bit PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use super::ImageTensor;
use crate::error::{Error, Result};
use crate::io;

/// Decodes PNG or PPM/PGM (by content) to RGB, dividing by 255.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = io::read_bytes(path)?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    from_dynamic(decoded)
}

pub fn from_dynamic(image: DynamicImage) -> Result<ImageTensor> {
    let rgb = image.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// `v·255` rounded half-up.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>> {
    let (h, w) = (image.height(), image.width());
    let rgb: Vec<u8> = match image.channels() {
        3 => image.data().iter().map(|&v| quantize(v)).collect(),
        1 => image
            .data()
            .iter()
            .flat_map(|&v| [quantize(v); 3])
            .collect(),
        c => {
            return Err(Error::Image(format!(
                "cannot encode a {c}-channel image as PNG"
            )))
        }
    };
    let buffer = RgbImage::from_raw(w as u32, h as u32, rgb)
        .ok_or_else(|| Error::Image("pixel buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buffer
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png(image: &ImageTensor, path: &Path) -> Result<()> {
    io::write_atomic(path, &encode_png(image)?)
}

/// Binary PPM (P6) encoding, used for bundled fixture images.
pub fn encode_ppm(image: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    match image.channels() {
        3 => out.extend(image.data().iter().map(|&v| quantize(v))),
        c => out.extend(
            image
                .data()
                .chunks_exact(c)
                .flat_map(|px| [quantize(px[0]); 3]),
        ),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128); // 127.5 -> 128
        assert_eq!(quantize(2.0 / 255.0), 2);
    }

    #[test]
    fn png_round_trip_of_8bit_values() {
        let data: Vec<f32> = (0..2 * 3 * 3)
            .map(|i| (i * 13 % 256) as f32 / 255.0)
            .collect();
        let img = ImageTensor::new(2, 3, 3, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_png(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn ppm_decodes() {
        let img = ImageTensor::new(1, 2, 3, vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        std::fs::write(&path, encode_ppm(&img)).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn garbage_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert_eq!(load_image(&path).unwrap_err().kind(), "format");
    }
}
