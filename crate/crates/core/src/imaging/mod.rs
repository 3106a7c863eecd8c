//! Grayscale raster container, I/O, filtering and full-reference quality metrics.

mod filter;
mod io;
mod metrics;

pub use filter::{
    bilinear_sample, box_filter, gaussian_blur, gaussian_kernel, max_filter, min_filter,
    resize_bilinear, rotate, sobel, warp, Edge,
};
pub(crate) use filter::{bicubic_raw, bilinear_raw, gaussian_blur_raw, separable};
pub use io::{load_image, save_image};
pub(crate) use metrics::normalize_raw;
pub use metrics::{
    normalize_mean_var, psnr, psnr_capped, quality_scores, rmse, ssim, QualityScores,
    DEFAULT_PSNR_CAP,
};

use crate::error::{Error, Result};

/// Smallest side accepted by pipeline entry points.
pub const MIN_PIPELINE_SIDE: usize = 32;

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    /// Wraps raw values, clipping to `[0, 1]`. Non-finite values are rejected.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "buffer of {} values for a {height}x{width} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite pixel value".into()));
        }
        Ok(Self::from_vec_clipped(height, width, data))
    }

    /// Wraps raw values, clipping to `[0, 1]` and mapping NaN to 0.
    pub(crate) fn from_vec_clipped(height: usize, width: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        GrayImage {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::from_vec_clipped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Applies `f` to every pixel and clips the result.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GrayImage {
        Self::from_vec_clipped(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Photographic negative, `1 - x`.
    pub fn inverted(&self) -> GrayImage {
        self.map(|v| 1.0 - v)
    }

    /// Linearly rescales so the minimum maps to 0 and the maximum to 1.
    /// A constant image maps to all 0.5.
    pub fn contrast_stretched(&self) -> GrayImage {
        stretch(self.height, self.width, &self.data)
    }

    /// Rejects images smaller than the pipeline minimum.
    pub fn check_pipeline_size(&self) -> Result<()> {
        if self.height < MIN_PIPELINE_SIDE || self.width < MIN_PIPELINE_SIDE {
            return Err(Error::Contract(format!(
                "image {}x{} is below the {MIN_PIPELINE_SIDE}x{MIN_PIPELINE_SIDE} minimum",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Contract(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Min-max stretch of an arbitrary real buffer into an image.
pub(crate) fn stretch(height: usize, width: usize, values: &[f64]) -> GrayImage {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let data = if span > 1e-12 {
        values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.5; values.len()]
    };
    GrayImage::from_vec_clipped(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_clips_and_rejects_non_finite() {
        let img = GrayImage::from_vec(1, 3, vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert!(GrayImage::from_vec(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(GrayImage::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stretch_maps_extremes() {
        let img = stretch(1, 3, &[-2.0, 0.0, 2.0]);
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(stretch(1, 2, &[3.0, 3.0]).data(), &[0.5, 0.5]);
    }

    #[test]
    fn pipeline_minimum_size() {
        assert!(GrayImage::new(31, 64).check_pipeline_size().is_err());
        assert!(GrayImage::new(32, 32).check_pipeline_size().is_ok());
    }
}
