//! Oriented Gabor filtering and the classical enhancement composition.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::frequency::{estimate_frequency, FrequencyMap};
use super::orientation::{estimate_orientation, OrientationField};
use crate::error::{Error, Result};
use crate::imaging::{normalize_raw, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalParams {
    pub block_size: usize,
    /// Gaussian envelope spread across the ridges.
    pub delta_x: f64,
    /// Gaussian envelope spread along the ridges.
    pub delta_y: f64,
    /// Logistic gain applied to the standardized filter response.
    pub squash_gain: f64,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        ClassicalParams {
            block_size: 16,
            delta_x: 4.0,
            delta_y: 4.0,
            squash_gain: 2.0,
        }
    }
}

/// Even-symmetric Gabor kernel tuned to ridges running along `theta` with
/// frequency `freq`. `x'` is the coordinate across the ridges:
/// `h = exp(-(x'^2/dx^2 + y'^2/dy^2)/2) cos(2 pi f x')`. The DC component is
/// removed so flat regions respond with zero.
pub fn gabor_kernel(theta: f64, freq: f64, delta_x: f64, delta_y: f64) -> (Vec<f64>, usize) {
    let radius = (3.0 * delta_x.max(delta_y)).ceil() as isize;
    let side = (2 * radius + 1) as usize;
    let (s, c) = theta.sin_cos();
    let mut kernel = Vec::with_capacity(side * side);
    let mut envelope = Vec::with_capacity(side * side);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (x, y) = (dx as f64, dy as f64);
            let across = -x * s + y * c;
            let along = x * c + y * s;
            let env = (-0.5 * (across * across / (delta_x * delta_x)
                + along * along / (delta_y * delta_y)))
                .exp();
            envelope.push(env);
            kernel.push(env * (TAU * freq * across).cos());
        }
    }
    let dc = kernel.iter().sum::<f64>() / envelope.iter().sum::<f64>();
    for (k, e) in kernel.iter_mut().zip(&envelope) {
        *k -= dc * e;
    }
    (kernel, radius as usize)
}

/// Filters every pixel with the Gabor kernel of its block, then standardizes
/// the response and squashes it through a logistic into `(0, 1)`.
pub fn gabor_enhance(
    img: &GrayImage,
    orient: &OrientationField,
    freqmap: &FrequencyMap,
    params: &ClassicalParams,
) -> Result<GrayImage> {
    let (h, w) = img.dims();
    if orient.height != h || orient.width != w {
        return Err(Error::Contract("orientation field does not match image".into()));
    }
    if freqmap.rows != orient.rows || freqmap.cols != orient.cols {
        return Err(Error::Contract("frequency map does not match orientation field".into()));
    }
    let normalized = normalize_raw(img.data(), 0.0, 1.0)
        .ok_or_else(|| Error::Degenerate("image has zero variance".into()))?;

    let kernels: Vec<(Vec<f64>, usize)> = (0..orient.rows * orient.cols)
        .map(|k| {
            let f = freqmap.freq[k].ok_or_else(|| {
                Error::Degenerate("frequency map has unfilled blocks".into())
            })?;
            Ok(gabor_kernel(orient.theta[k], f, params.delta_x, params.delta_y))
        })
        .collect::<Result<_>>()?;

    let mut response = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (r, c) = orient.block_of(y, x);
            let (kernel, radius) = &kernels[r * orient.cols + c];
            let radius = *radius as isize;
            let side = (2 * radius + 1) as usize;
            let mut acc = 0.0;
            for dy in -radius..=radius {
                let sy = reflect(y as isize + dy, h);
                let row = &normalized[sy * w..(sy + 1) * w];
                let krow = &kernel[((dy + radius) as usize) * side..][..side];
                for (t, &kv) in krow.iter().enumerate() {
                    acc += kv * row[reflect(x as isize + t as isize - radius, w)];
                }
            }
            response[y * w + x] = acc;
        }
    }
    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let std = (response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 0.0 };
    let out = response
        .iter()
        .map(|v| 1.0 / (1.0 + (-params.squash_gain * (v - mean) * scale).exp()))
        .collect();
    Ok(GrayImage::from_vec_clipped(h, w, out))
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period.max(1));
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Orientation estimation, frequency estimation and Gabor filtering in sequence.
pub fn classical_enhance(img: &GrayImage) -> Result<GrayImage> {
    classical_enhance_with(img, &ClassicalParams::default())
}

pub fn classical_enhance_with(img: &GrayImage, params: &ClassicalParams) -> Result<GrayImage> {
    let orient = estimate_orientation(img, params.block_size)?;
    let freq = estimate_frequency(img, &orient, params.block_size)?;
    gabor_enhance(img, &orient, &freq, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ssim;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn stripes(size: usize, theta: f64, period: f64) -> GrayImage {
        let (s, c) = theta.sin_cos();
        GrayImage::from_fn(size, size, |y, x| {
            0.5 + 0.5 * (TAU * (-(x as f64) * s + y as f64 * c) / period).cos()
        })
    }

    fn noisy(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        img.map(|v| v + n.sample(&mut rng))
    }

    #[test]
    fn kernel_has_no_dc_response() {
        let (k, r) = gabor_kernel(0.3, 0.1, 4.0, 4.0);
        assert_eq!(r, 12);
        assert!(k.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn enhancement_improves_noisy_stripes() {
        for (seed, deg) in [(1u64, 0.0f64), (2, 35.0), (3, 80.0)] {
            let clean = stripes(96, deg.to_radians(), 9.0);
            let degraded = noisy(&clean, 0.1, seed);
            let enhanced = classical_enhance(&degraded).unwrap();
            let before = ssim(&degraded, &clean).unwrap();
            let after = ssim(&enhanced, &clean).unwrap();
            assert!(after > before, "{deg}: {after} <= {before}");
        }
    }

    #[test]
    fn enhancement_is_nearly_idempotent() {
        let clean = stripes(96, 0.6, 10.0);
        let once = classical_enhance(&clean).unwrap();
        let twice = classical_enhance(&once).unwrap();
        let a = ssim(&once, &clean).unwrap();
        let b = ssim(&twice, &clean).unwrap();
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }

    #[test]
    fn output_is_within_unit_range() {
        let img = noisy(&stripes(64, 1.0, 7.0), 0.3, 9);
        let out = classical_enhance(&img).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degenerate_input_propagates() {
        assert!(matches!(
            classical_enhance(&GrayImage::filled(64, 64, 0.2)),
            Err(Error::Degenerate(_))
        ));
    }
}
