use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::GrayImage;
use crate::error::{Error, Result};

/// Reads an 8/16-bit grayscale or RGB raster (PNG, PGM, ...) into `[0, 1]`.
///
/// Color inputs are reduced by averaging the three channels; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("{}: zero-sized image", path.display())));
    }
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        DynamicImage::ImageLumaA8(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        DynamicImage::ImageLumaA16(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
        }
        DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 255.0))
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| p.0[..3].iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 255.0))
            .collect(),
        other => other
            .to_rgb16()
            .pixels()
            .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 65535.0))
            .collect(),
    };
    GrayImage::from_vec(h, w, data)
}

/// Writes an 8-bit grayscale PNG. Values are rounded to the nearest level.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::Contract("pixel buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })
}
