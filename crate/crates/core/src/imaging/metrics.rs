use serde::{Deserialize, Serialize};

use super::filter::{gaussian_kernel_radius, separable_valid};
use super::GrayImage;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const DEFAULT_PSNR_CAP: f64 = 100.0;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

/// The three full-reference scores reported for an enhancement result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub ssim: f64,
    /// On the 0-255 intensity scale.
    pub rmse: f64,
    /// dB, capped for identical inputs.
    pub psnr: f64,
}

/// Mean SSIM over all fully-contained 11x11 Gaussian (sigma 1.5) windows,
/// with `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` and `L = 1`.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    let side = 2 * SSIM_RADIUS + 1;
    if h < side || w < side {
        return Err(Error::Contract(format!(
            "SSIM needs at least {side}x{side} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_kernel_radius(SSIM_SIGMA, SSIM_RADIUS);
    let filt = |v: &[f64]| separable_valid(v, h, w, &g, &g).0;

    let aa: Vec<f64> = a.data().iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data().iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let mu_a = filt(a.data());
    let mu_b = filt(b.data());
    let e_aa = filt(&aa);
    let e_bb = filt(&bb);
    let e_ab = filt(&ab);

    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// Root-mean-square error on the 0-255 intensity scale.
pub fn rmse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = 255.0 * x - 255.0 * y;
            d * d
        })
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// `20 log10(255 / rmse)`, or [`DEFAULT_PSNR_CAP`] when the images are equal.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    psnr_capped(a, b, DEFAULT_PSNR_CAP)
}

pub fn psnr_capped(a: &GrayImage, b: &GrayImage, cap: f64) -> Result<f64> {
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(cap);
    }
    Ok(20.0 * (255.0 / e).log10())
}

pub fn quality_scores(pred: &GrayImage, reference: &GrayImage) -> Result<QualityScores> {
    Ok(QualityScores {
        ssim: ssim(pred, reference)?,
        rmse: rmse(pred, reference)?,
        psnr: psnr(pred, reference)?,
    })
}

/// Mean/variance normalization of the classical enhancement pipeline.
///
/// Each pixel moves to `target_mean +/- sqrt(target_var * (x - m)^2 / v)`,
/// keeping its side of the mean, where `m` and `v` are the image statistics.
/// The result is clipped to `[0, 1]`.
pub fn normalize_mean_var(img: &GrayImage, target_mean: f64, target_var: f64) -> Result<GrayImage> {
    let (m, v) = (img.mean(), img.variance());
    if v <= 1e-12 {
        return Err(Error::Degenerate("image has zero variance".into()));
    }
    Ok(img.map(|x| {
        let dev = (target_var * (x - m) * (x - m) / v).sqrt();
        if x > m {
            target_mean + dev
        } else {
            target_mean - dev
        }
    }))
}

/// Unclipped variant used internally where negative values are meaningful.
pub(crate) fn normalize_raw(values: &[f64], target_mean: f64, target_var: f64) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    if v <= 1e-12 {
        return None;
    }
    Some(
        values
            .iter()
            .map(|&x| {
                let dev = (target_var * (x - m) * (x - m) / v).sqrt();
                if x > m {
                    target_mean + dev
                } else {
                    target_mean - dev
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::gaussian_blur;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, h: usize, w: usize) -> GrayImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn stripes(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |_, x| if (x / 4) % 2 == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn identical_images() {
        let x = random_image(1, 40, 33);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn ssim_of_inverted_stripes_is_negative() {
        let x = stripes(32, 32);
        assert!(ssim(&x, &x.inverted()).unwrap() < 0.0);
    }

    #[test]
    fn closed_form_rmse_and_psnr() {
        let zeros = GrayImage::filled(16, 16, 0.0);
        let ones = GrayImage::filled(16, 16, 1.0);
        let half = GrayImage::filled(16, 16, 0.5);
        assert_eq!(rmse(&zeros, &ones).unwrap(), 255.0);
        assert_eq!(rmse(&zeros, &half).unwrap(), 127.5);
        let p = psnr(&zeros, &half).unwrap();
        assert!((p - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((p - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_falls_as_blur_grows() {
        let x = random_image(3, 48, 48);
        let mut last = f64::INFINITY;
        for sigma in [0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
            let p = psnr(&x, &gaussian_blur(&x, sigma)).unwrap();
            assert!(p < last, "sigma {sigma}: {p} !< {last}");
            last = p;
        }
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let a = GrayImage::new(16, 16);
        let b = GrayImage::new(16, 17);
        assert!(matches!(ssim(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(rmse(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(psnr(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn normalization_hits_targets() {
        for seed in 0..10 {
            let x = random_image(seed, 40, 40).map(|v| 0.2 + 0.3 * v);
            let raw = normalize_raw(x.data(), 0.5, 0.02).unwrap();
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
            let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!((var - 0.02).abs() < 0.005);
        }
    }

    #[test]
    fn normalization_fixed_point_and_degenerate() {
        let x = GrayImage::from_fn(20, 20, |y, x| if (x + y) % 2 == 0 { 0.4 } else { 0.6 });
        let out = normalize_mean_var(&x, x.mean(), x.variance()).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            normalize_mean_var(&GrayImage::filled(8, 8, 0.3), 0.5, 0.1),
            Err(Error::Degenerate(_))
        ));
    }
}
