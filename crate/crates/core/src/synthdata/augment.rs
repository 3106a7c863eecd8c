//! Random views for the contrastive and bootstrap baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{bilinear_sample, gaussian_blur, rotate, GrayImage};
use crate::seed::rng_from;

/// Per-transform probabilities and ranges. "Color jitter" acts on brightness
/// and contrast only since the images are single channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub rotate_probability: f64,
    pub max_rotation_deg: f64,
    pub jitter_probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub crop_probability: f64,
    pub crop_scale: (f64, f64),
    pub blur_probability: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotate_probability: 0.5,
            max_rotation_deg: 30.0,
            jitter_probability: 0.8,
            brightness: 0.2,
            contrast: 0.3,
            crop_probability: 0.8,
            crop_scale: (0.6, 1.0),
            blur_probability: 0.5,
            blur_sigma: (0.1, 2.0),
        }
    }
}

impl AugmentPolicy {
    /// Every transform disabled.
    pub fn none() -> Self {
        AugmentPolicy {
            rotate_probability: 0.0,
            jitter_probability: 0.0,
            crop_probability: 0.0,
            blur_probability: 0.0,
            ..Default::default()
        }
    }
}

/// Produces one augmented view: random resized crop, rotation, brightness and
/// contrast jitter, then Gaussian blur, each gated by its probability.
pub fn augment_view(img: &GrayImage, policy: &AugmentPolicy, seed: u64) -> GrayImage {
    let mut rng = rng_from(seed);
    let (h, w) = img.dims();
    let mut out = img.clone();
    if rng.random_bool(policy.crop_probability.clamp(0.0, 1.0)) {
        let area = rng.random_range(policy.crop_scale.0..=policy.crop_scale.1);
        let side = area.sqrt();
        let (ch, cw) = (side * h as f64, side * w as f64);
        let y0 = rng.random_range(0.0..=(h as f64 - ch).max(0.0));
        let x0 = rng.random_range(0.0..=(w as f64 - cw).max(0.0));
        let src = out.clone();
        out = GrayImage::from_fn(h, w, |y, x| {
            let sy = y0 + (y as f64 + 0.5) * ch / h as f64 - 0.5;
            let sx = x0 + (x as f64 + 0.5) * cw / w as f64 - 0.5;
            bilinear_sample(&src, sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64), 0.0)
        });
    }
    if rng.random_bool(policy.rotate_probability.clamp(0.0, 1.0)) {
        let m = policy.max_rotation_deg;
        let angle = rng.random_range(-m..=m).to_radians();
        out = rotate(&out, angle, out.mean());
    }
    if rng.random_bool(policy.jitter_probability.clamp(0.0, 1.0)) {
        let b = rng.random_range(-policy.brightness..=policy.brightness);
        let c = 1.0 + rng.random_range(-policy.contrast..=policy.contrast);
        let m = out.mean();
        out = out.map(|v| (v - m) * c + m + b);
    }
    if rng.random_bool(policy.blur_probability.clamp(0.0, 1.0)) {
        let sigma = rng.random_range(policy.blur_sigma.0..=policy.blur_sigma.1);
        out = gaussian_blur(&out, sigma);
    }
    out
}
