//! Master-print synthesis by iterated oriented band-pass filtering of noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frequency::{MAX_FREQUENCY, MIN_FREQUENCY};
use super::gabor::gabor_kernel;
use super::orientation::OrientationField;
use crate::error::{Error, Result};
use crate::imaging::{stretch, GrayImage};
use crate::seed::rng_from;

const ORIENTATION_BINS: usize = 36;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MasterParams {
    /// Filtering passes, 3 to 8.
    pub iterations: usize,
    /// Saturation gain applied between passes.
    pub gain: f64,
    /// `tanh` gain of the final rendering; lower values give softer ridges.
    pub render_gain: f64,
}

impl Default for MasterParams {
    fn default() -> Self {
        MasterParams {
            iterations: 5,
            gain: 2.5,
            render_gain: 0.5,
        }
    }
}

/// Grows a ridge pattern that follows `orient` at ridge frequency `freq`.
///
/// Seeded white noise is repeatedly filtered with the Gabor kernel matching
/// each pixel's orientation (quantized to 5 degree bins), standardized and
/// saturated; the last pass is squashed with `tanh` instead and stretched to
/// `[0, 1]`.
pub fn gen_master_print(orient: &OrientationField, freq: f64, seed: u64) -> Result<GrayImage> {
    gen_master_print_with(orient, freq, seed, &MasterParams::default())
}

pub fn gen_master_print_with(
    orient: &OrientationField,
    freq: f64,
    seed: u64,
    params: &MasterParams,
) -> Result<GrayImage> {
    if !(freq > MIN_FREQUENCY && freq < MAX_FREQUENCY) {
        return Err(Error::Contract(format!(
            "ridge frequency {freq} outside (1/25, 1/3)"
        )));
    }
    if !(3..=8).contains(&params.iterations) {
        return Err(Error::Config("master print iterations must be in [3, 8]".into()));
    }
    let (h, w) = (orient.height, orient.width);
    let sigma = 0.5 / freq;
    let bank: Vec<(Vec<f64>, usize)> = (0..ORIENTATION_BINS)
        .map(|b| {
            let theta = b as f64 * std::f64::consts::PI / ORIENTATION_BINS as f64;
            let (mut k, r) = gabor_kernel(theta, freq, sigma, sigma);
            let norm: f64 = k.iter().map(|v| v.abs()).sum();
            k.iter_mut().for_each(|v| *v /= norm);
            (k, r)
        })
        .collect();
    let bins: Vec<usize> = (0..h * w)
        .map(|i| {
            let t = orient.angle_at((i / w) as f64, (i % w) as f64);
            let b = (t / std::f64::consts::PI * ORIENTATION_BINS as f64).round() as usize;
            b % ORIENTATION_BINS
        })
        .collect();

    let mut rng = rng_from(seed);
    let mut field: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut next = vec![0.0; h * w];
    for pass in 0..params.iterations {
        let last = pass + 1 == params.iterations;
        for y in 0..h {
            for x in 0..w {
                let (kernel, radius) = &bank[bins[y * w + x]];
                let r = *radius as isize;
                let side = (2 * r + 1) as usize;
                let mut acc = 0.0;
                for dy in -r..=r {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let row = &field[sy as usize * w..(sy as usize + 1) * w];
                    let krow = &kernel[(dy + r) as usize * side..][..side];
                    let x0 = x as isize - r;
                    let lo = (-x0).max(0) as usize;
                    let hi = side.min((w as isize - x0) as usize);
                    for t in lo..hi {
                        acc += krow[t] * row[(x0 + t as isize) as usize];
                    }
                }
                next[y * w + x] = acc;
            }
        }
        let n = next.len() as f64;
        let mean = next.iter().sum::<f64>() / n;
        let std = (next.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if last {
            // soft rendering keeps ridge profiles smooth
            let scale = if std > 0.0 { params.render_gain / std } else { 0.0 };
            for (f, v) in field.iter_mut().zip(&next) {
                *f = ((v - mean) * scale).tanh();
            }
        } else {
            let scale = if std > 0.0 { params.gain / std } else { 0.0 };
            for (f, v) in field.iter_mut().zip(&next) {
                *f = ((v - mean) * scale).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(stretch(h, w, &field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    /// Location of the strongest non-DC spectral peak, in cycles/pixel `(fy, fx)`.
    fn dominant_frequency(img: &GrayImage) -> (f64, f64) {
        let (h, w) = img.dims();
        let mean = img.mean();
        let mut buf: Vec<Complex<f64>> =
            img.data().iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        let mut planner = FftPlanner::new();
        let row_fft = planner.plan_fft_forward(w);
        for row in buf.chunks_mut(w) {
            row_fft.process(row);
        }
        let col_fft = planner.plan_fft_forward(h);
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        let signed = |k: usize, n: usize| {
            if k > n / 2 {
                k as f64 - n as f64
            } else {
                k as f64
            }
        };
        let (mut best, mut at) = (0.0, (0.0, 0.0));
        for y in 0..h {
            for x in 0..w {
                let m = buf[y * w + x].norm();
                if m > best && (x, y) != (0, 0) {
                    best = m;
                    at = (signed(y, h) / h as f64, signed(x, w) / w as f64);
                }
            }
        }
        at
    }

    #[test]
    fn horizontal_ridges_peak_on_vertical_axis() {
        let orient = OrientationField::constant(128, 128, 16, 0.0);
        let img = gen_master_print(&orient, 0.1, 4).unwrap();
        let (fy, fx) = dominant_frequency(&img);
        assert!((fy.abs() - 0.1).abs() <= 0.02, "fy {fy}");
        assert!(fx.abs() <= 0.02, "fx {fx}");
    }

    #[test]
    fn deterministic_in_seed() {
        let orient = OrientationField::constant(64, 64, 16, 1.0);
        let a = gen_master_print(&orient, 0.12, 9).unwrap();
        assert_eq!(a, gen_master_print(&orient, 0.12, 9).unwrap());
        assert_ne!(a, gen_master_print(&orient, 0.12, 10).unwrap());
    }

    #[test]
    fn mean_intensity_is_balanced() {
        let orient = OrientationField::constant(64, 64, 16, 0.5);
        for seed in 0..50 {
            let m = gen_master_print(&orient, 0.1, seed).unwrap().mean();
            assert!((0.35..=0.65).contains(&m), "seed {seed}: {m}");
        }
    }

    #[test]
    fn rejects_out_of_range_frequency() {
        let orient = OrientationField::constant(64, 64, 16, 0.0);
        assert!(gen_master_print(&orient, 0.02, 0).is_err());
        assert!(gen_master_print(&orient, 0.5, 0).is_err());
    }
}
