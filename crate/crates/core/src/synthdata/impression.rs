//! Simulated impressions of a master print: small affine motion plus a smooth
//! elastic distortion.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{bicubic_raw, gaussian_blur_raw, GrayImage};
use crate::seed::{derive_seed, rng_from};

/// Background value outside the captured area (bright, like a blank card).
pub const BACKGROUND: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpressionConfig {
    /// Upper bound on |rotation|, at most 15 degrees.
    pub max_rotation_deg: f64,
    /// Upper bound on |translation| as a fraction of the side, at most 0.1.
    pub max_translation: f64,
    /// Scale drawn uniformly from this range, within [0.95, 1.05].
    pub scale_range: (f64, f64),
    /// Peak elastic displacement in pixels.
    pub elastic_amplitude: f64,
}

impl Default for ImpressionConfig {
    fn default() -> Self {
        ImpressionConfig {
            max_rotation_deg: 15.0,
            max_translation: 0.1,
            scale_range: (0.95, 1.05),
            elastic_amplitude: 1.5,
        }
    }
}

impl ImpressionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=15.0).contains(&self.max_rotation_deg)
            && (0.0..=0.1).contains(&self.max_translation)
            && self.scale_range.0 >= 0.95
            && self.scale_range.0 <= self.scale_range.1
            && self.scale_range.1 <= 1.05
            && (0.0..=4.0).contains(&self.elastic_amplitude);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("impression parameters out of range: {self:?}")))
        }
    }
}

/// One concrete impression transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionParams {
    pub rotation_deg: f64,
    /// Translation in pixels, `(dy, dx)`.
    pub translation: (f64, f64),
    pub scale: f64,
    pub elastic_amplitude: f64,
    /// Seed of the elastic displacement field.
    pub elastic_seed: u64,
}

impl ImpressionParams {
    pub fn identity() -> Self {
        ImpressionParams {
            rotation_deg: 0.0,
            translation: (0.0, 0.0),
            scale: 1.0,
            elastic_amplitude: 0.0,
            elastic_seed: 0,
        }
    }

    pub fn sample(config: &ImpressionConfig, side: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let sym = |rng: &mut rand_chacha::ChaCha8Rng, m: f64| {
            if m > 0.0 {
                rng.random_range(-m..=m)
            } else {
                0.0
            }
        };
        let t = config.max_translation * side as f64;
        ImpressionParams {
            rotation_deg: sym(&mut rng, config.max_rotation_deg),
            translation: (sym(&mut rng, t), sym(&mut rng, t)),
            scale: rng.random_range(config.scale_range.0..=config.scale_range.1),
            elastic_amplitude: config.elastic_amplitude,
            elastic_seed: rng.random(),
        }
    }
}

/// Renders the impression `(identity_id, impression_id)` of `master`.
pub fn gen_impression(
    master: &GrayImage,
    identity_id: u64,
    impression_id: u64,
    seed: u64,
    config: &ImpressionConfig,
) -> Result<GrayImage> {
    config.validate()?;
    let side = master.height().min(master.width());
    let key = derive_seed(seed, "impression-params", &[identity_id, impression_id]);
    Ok(apply_impression(master, &ImpressionParams::sample(config, side, key)))
}

/// Applies an impression transform. Output pixel `p` samples the master at
/// `A^-1 (p - c - t) + c + d(p)`, with `A` the scaled rotation about the
/// center `c`, `t` the translation and `d` the elastic displacement. Sampling
/// uses cubic convolution.
pub fn apply_impression(master: &GrayImage, params: &ImpressionParams) -> GrayImage {
    let (h, w) = master.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = params.rotation_deg.to_radians().sin_cos();
    let inv_scale = 1.0 / params.scale;
    let displacement = (params.elastic_amplitude > 0.0)
        .then(|| elastic_field(h, w, params.elastic_amplitude, params.elastic_seed));
    let src = master.data();
    GrayImage::from_fn(h, w, |y, x| {
        let dx = x as f64 - cx - params.translation.1;
        let dy = y as f64 - cy - params.translation.0;
        let mut sx = (c * dx + s * dy) * inv_scale + cx;
        let mut sy = (-s * dx + c * dy) * inv_scale + cy;
        if let Some((ey, ex)) = &displacement {
            sy += ey[y * w + x];
            sx += ex[y * w + x];
        }
        bicubic_raw(src, h, w, sy, sx, BACKGROUND)
    })
}

/// Smooth random displacement `(dy, dx)` with peak magnitude `amplitude`.
fn elastic_field(h: usize, w: usize, amplitude: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from(seed);
    let sigma = h.min(w) as f64 / 8.0;
    let mut component = || {
        let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut smooth = gaussian_blur_raw(&noise, h, w, sigma);
        let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            smooth.iter_mut().for_each(|v| *v *= amplitude / peak);
        }
        smooth
    };
    let dy = component();
    let dx = component();
    (dy, dx)
}

/// Normalized cross-correlation of two equally sized images.
pub fn ncc(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.check_same_dims(b)?;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Ok(0.0);
    }
    Ok(num / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::master::gen_master_print;
    use crate::synthdata::orientation::{gen_orientation_field, OrientationParams};

    fn master(seed: u64) -> GrayImage {
        let o = gen_orientation_field(seed, 96, 96, 16, &OrientationParams::default()).unwrap();
        gen_master_print(&o, 0.1, seed).unwrap()
    }

    #[test]
    fn identity_transform_is_exact() {
        let m = master(1);
        assert_eq!(apply_impression(&m, &ImpressionParams::identity()), m);
    }

    #[test]
    fn rotation_round_trip_is_close_in_the_center() {
        let m = master(2);
        let fwd = ImpressionParams { rotation_deg: 10.0, ..ImpressionParams::identity() };
        let back = ImpressionParams { rotation_deg: -10.0, ..ImpressionParams::identity() };
        let out = apply_impression(&apply_impression(&m, &fwd), &back);
        let (h, w) = m.dims();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let radius = 0.4 * h as f64;
        let (mut sum, mut n) = (0.0, 0);
        for y in 0..h {
            for x in 0..w {
                if ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() <= radius {
                    sum += (out.get(y, x) - m.get(y, x)).abs();
                    n += 1;
                }
            }
        }
        assert!(sum / (n as f64) < 0.02, "mean abs diff {}", sum / n as f64);
    }

    #[test]
    fn impressions_of_one_master_correlate_more() {
        let cfg = ImpressionConfig::default();
        let (mut genuine, mut imposter) = (0.0, 0.0);
        for t in 0..20u64 {
            let (ma, mb) = (master(100 + t), master(200 + t));
            let a1 = gen_impression(&ma, t, 0, 5, &cfg).unwrap();
            let a2 = gen_impression(&ma, t, 1, 5, &cfg).unwrap();
            let b1 = gen_impression(&mb, 1000 + t, 0, 5, &cfg).unwrap();
            genuine += ncc(&a1, &a2).unwrap();
            imposter += ncc(&a1, &b1).unwrap();
        }
        assert!(genuine > imposter, "{genuine} <= {imposter}");
    }

    #[test]
    fn impressions_are_deterministic() {
        let m = master(3);
        let cfg = ImpressionConfig::default();
        assert_eq!(
            gen_impression(&m, 4, 2, 77, &cfg).unwrap(),
            gen_impression(&m, 4, 2, 77, &cfg).unwrap()
        );
        assert!(gen_impression(&m, 4, 2, 77, &ImpressionConfig { max_rotation_deg: 30.0, ..cfg })
            .is_err());
    }
}
