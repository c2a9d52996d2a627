//! 8-bit sRGB PNG in, linear radiance out, and back.
//!
//! The transfer function is the IEC 61966-2-1 piecewise curve. Export
//! clamps to [0, 1] and rounds to nearest, which makes save-load-save
//! stable: the second save reproduces the first byte for byte.

use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use crate::image::ImageBuffer;

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Decode(#[from] image::ImageError),
    #[error("unsupported pixel format {0}; 8-bit PNG required")]
    UnsupportedFormat(String),
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer<f64>, PngError> {
    let dynamic = image::open(path.as_ref())?;
    let rgb: RgbImage = match dynamic {
        DynamicImage::ImageRgb8(img) => img,
        DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => dynamic.to_rgb8(),
        other => {
            return Err(PngError::UnsupportedFormat(format!("{:?}", other.color())))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = ImageBuffer::new(w, h);
    let data = out.data_mut();
    for (i, byte) in rgb.as_raw().iter().enumerate() {
        data[i] = srgb_to_linear(*byte as f64 / 255.0);
    }
    Ok(out)
}

pub fn save_image(img: &ImageBuffer<f64>, path: impl AsRef<Path>) -> Result<(), PngError> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| {
            let srgb = linear_to_srgb(v.clamp(0.0, 1.0));
            (srgb * 255.0).round() as u8
        })
        .collect();
    let rgb = RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer size matches dimensions");
    rgb.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

/// sRGB-quantized copy: what a reference image looks like after a trip
/// through an 8-bit PNG. Synthetic ground truth passes through this before
/// being compared against renders supervised by the stored file.
pub fn quantize_srgb(img: &ImageBuffer<f64>) -> ImageBuffer<f64> {
    let mut out = ImageBuffer::new(img.width(), img.height());
    let data = out.data_mut();
    for (i, v) in img.data().iter().enumerate() {
        let byte = (linear_to_srgb(v.clamp(0.0, 1.0)) * 255.0).round();
        data[i] = srgb_to_linear(byte / 255.0);
    }
    out
}
