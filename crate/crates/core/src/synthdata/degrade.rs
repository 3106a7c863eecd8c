//! Seeded degradation recipes: sensor noise, blur, fading, dry and wet skin,
//! occluding blobs and small misalignment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, gaussian_blur_raw, max_filter, min_filter, rotate, warp, GrayImage};
use crate::seed::{derive_seed, rng_from};

/// One degradation step. Parameter ranges are checked by [`DegradationStep::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationStep {
    /// Additive white Gaussian noise, `sigma` in [0, 0.5].
    GaussianNoise { sigma: f64 },
    /// Gaussian blur, `sigma` in [0, 5] pixels.
    Blur { sigma: f64 },
    /// Contrast scaled about the mean by `contrast` in [0.05, 1], then
    /// shifted by `brightness` in [-0.4, 0.4].
    ContrastFade { contrast: f64, brightness: f64 },
    /// Dry skin: bright valleys spread over ridges inside random patches that
    /// cover roughly `coverage` in [0, 1] of the print. `radius` in [1, 3].
    DryErosion { coverage: f64, radius: usize },
    /// Wet skin: dark ridges bleed into valleys inside random patches.
    WetDilation { coverage: f64, radius: usize },
    /// `count` in [0, 16] soft discs of `intensity` in [0, 1], radius a
    /// fraction of the side in `[min_radius, max_radius]` within [0.01, 0.25].
    BlobOcclusion {
        count: usize,
        min_radius: f64,
        max_radius: f64,
        intensity: f64,
    },
    /// Random shift up to `max_shift` in [0, 8] pixels and rotation up to
    /// `max_rotation_deg` in [0, 10].
    AffineJitter { max_shift: f64, max_rotation_deg: f64 },
}

impl DegradationStep {
    pub fn kind(&self) -> &'static str {
        match self {
            DegradationStep::GaussianNoise { .. } => "gaussian_noise",
            DegradationStep::Blur { .. } => "blur",
            DegradationStep::ContrastFade { .. } => "contrast_fade",
            DegradationStep::DryErosion { .. } => "dry_erosion",
            DegradationStep::WetDilation { .. } => "wet_dilation",
            DegradationStep::BlobOcclusion { .. } => "blob_occlusion",
            DegradationStep::AffineJitter { .. } => "affine_jitter",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DegradationStep::GaussianNoise { sigma } => (0.0..=0.5).contains(&sigma),
            DegradationStep::Blur { sigma } => (0.0..=5.0).contains(&sigma),
            DegradationStep::ContrastFade { contrast, brightness } => {
                (0.05..=1.0).contains(&contrast) && (-0.4..=0.4).contains(&brightness)
            }
            DegradationStep::DryErosion { coverage, radius }
            | DegradationStep::WetDilation { coverage, radius } => {
                (0.0..=1.0).contains(&coverage) && (1..=3).contains(&radius)
            }
            DegradationStep::BlobOcclusion { count, min_radius, max_radius, intensity } => {
                count <= 16
                    && (0.01..=0.25).contains(&min_radius)
                    && (min_radius..=0.25).contains(&max_radius)
                    && (0.0..=1.0).contains(&intensity)
            }
            DegradationStep::AffineJitter { max_shift, max_rotation_deg } => {
                (0.0..=8.0).contains(&max_shift) && (0.0..=10.0).contains(&max_rotation_deg)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{} parameters out of range: {self:?}", self.kind())))
        }
    }
}

/// Ordered steps plus the seed that drives every random draw.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub steps: Vec<DegradationStep>,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn new(steps: Vec<DegradationStep>, seed: u64) -> Self {
        DegradationRecipe { steps, seed }
    }

    /// Parses a recipe; unknown step kinds are configuration errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let recipe: DegradationRecipe =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("recipe: {e}")))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps.iter().try_for_each(DegradationStep::validate)
    }
}

/// Applies the recipe's steps in order. Step `i` draws from a generator
/// seeded with `derive_seed(recipe.seed, "degrade-step", [i])`.
pub fn degrade(img: &GrayImage, recipe: &DegradationRecipe) -> Result<GrayImage> {
    recipe.validate()?;
    let mut out = img.clone();
    for (i, step) in recipe.steps.iter().enumerate() {
        let mut rng = rng_from(derive_seed(recipe.seed, "degrade-step", &[i as u64]));
        out = apply_step(&out, step, &mut rng);
    }
    Ok(out)
}

fn apply_step(img: &GrayImage, step: &DegradationStep, rng: &mut ChaCha8Rng) -> GrayImage {
    match *step {
        DegradationStep::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return img.clone();
            }
            let noise = Normal::new(0.0, sigma).expect("validated sigma");
            img.map(|v| v + noise.sample(rng))
        }
        DegradationStep::Blur { sigma } => gaussian_blur(img, sigma),
        DegradationStep::ContrastFade { contrast, brightness } => {
            let m = img.mean();
            img.map(|v| m + (v - m) * contrast + brightness)
        }
        DegradationStep::DryErosion { coverage, radius } => {
            let spread = max_filter(img, radius);
            blend_patches(img, &spread, coverage, rng)
        }
        DegradationStep::WetDilation { coverage, radius } => {
            let spread = min_filter(img, radius);
            blend_patches(img, &spread, coverage, rng)
        }
        DegradationStep::BlobOcclusion { count, min_radius, max_radius, intensity } => {
            let (h, w) = img.dims();
            let side = h.min(w) as f64;
            let blobs: Vec<(f64, f64, f64)> = (0..count)
                .map(|_| {
                    let r = rng.random_range(min_radius..=max_radius) * side;
                    (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), r)
                })
                .collect();
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    let mut alpha: f64 = 0.0;
                    for &(by, bx, r) in &blobs {
                        let d = ((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)).sqrt();
                        // soft edge two pixels wide
                        alpha = alpha.max(((r - d) / 2.0 + 0.5).clamp(0.0, 1.0));
                    }
                    if alpha > 0.0 {
                        out.set(y, x, (1.0 - alpha) * img.get(y, x) + alpha * intensity);
                    }
                }
            }
            out
        }
        DegradationStep::AffineJitter { max_shift, max_rotation_deg } => {
            let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
            let angle = sym(rng, max_rotation_deg).to_radians();
            let (dy, dx) = (sym(rng, max_shift), sym(rng, max_shift));
            let fill = img.mean();
            let rotated = rotate(img, angle, fill);
            warp(&rotated, fill, |y, x| (y - dy, x - dx))
        }
    }
}

/// Blends `spread` into `img` under a smooth random mask covering about
/// `coverage` of the area.
fn blend_patches(img: &GrayImage, spread: &GrayImage, coverage: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    if coverage <= 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    let smooth = gaussian_blur_raw(&noise, h, w, h.min(w) as f64 / 10.0);
    let mut sorted = smooth.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = (((1.0 - coverage) * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    let cut = sorted[idx];
    let spread_sd = {
        let n = smooth.len() as f64;
        let m = smooth.iter().sum::<f64>() / n;
        (smooth.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12)
    };
    let data = img
        .data()
        .iter()
        .zip(spread.data())
        .zip(&smooth)
        .map(|((&v, &s), &m)| {
            let alpha = if coverage >= 1.0 {
                1.0
            } else {
                (((m - cut) / (0.25 * spread_sd)) + 0.5).clamp(0.0, 1.0)
            };
            (1.0 - alpha) * v + alpha * s
        })
        .collect();
    GrayImage::from_vec_clipped(h, w, data)
}

/// Distribution from which per-sample recipes are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationProfile {
    pub noise_sigma: (f64, f64),
    pub blur_probability: f64,
    pub blur_sigma: (f64, f64),
    pub fade_probability: f64,
    pub fade_contrast: (f64, f64),
    pub fade_brightness: (f64, f64),
    pub dry_probability: f64,
    pub wet_probability: f64,
    pub skin_coverage: (f64, f64),
    pub blob_probability: f64,
    pub blob_count: (usize, usize),
    pub jitter_probability: f64,
}

impl Default for DegradationProfile {
    fn default() -> Self {
        DegradationProfile {
            noise_sigma: (0.08, 0.25),
            blur_probability: 0.6,
            blur_sigma: (0.8, 2.0),
            fade_probability: 0.7,
            fade_contrast: (0.3, 0.8),
            fade_brightness: (-0.15, 0.15),
            dry_probability: 0.4,
            wet_probability: 0.4,
            skin_coverage: (0.2, 0.5),
            blob_probability: 0.5,
            blob_count: (1, 4),
            jitter_probability: 0.0,
        }
    }
}

impl DegradationProfile {
    /// Draws a recipe. Noise is always present; the other kinds are included
    /// with their configured probability, in a fixed order.
    pub fn sample(&self, seed: u64) -> DegradationRecipe {
        let mut rng = rng_from(seed);
        let mut steps = Vec::new();
        let range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        if rng.random_bool(self.dry_probability.clamp(0.0, 1.0)) {
            let coverage = range(&mut rng, self.skin_coverage);
            steps.push(DegradationStep::DryErosion { coverage, radius: rng.random_range(1..=2) });
        }
        if rng.random_bool(self.wet_probability.clamp(0.0, 1.0)) {
            let coverage = range(&mut rng, self.skin_coverage);
            steps.push(DegradationStep::WetDilation { coverage, radius: rng.random_range(1..=2) });
        }
        if rng.random_bool(self.blob_probability.clamp(0.0, 1.0)) {
            let count = rng.random_range(self.blob_count.0..=self.blob_count.1.max(self.blob_count.0));
            steps.push(DegradationStep::BlobOcclusion {
                count,
                min_radius: 0.04,
                max_radius: 0.12,
                intensity: if rng.random_bool(0.5) { 0.0 } else { 1.0 },
            });
        }
        if rng.random_bool(self.jitter_probability.clamp(0.0, 1.0)) {
            steps.push(DegradationStep::AffineJitter { max_shift: 2.0, max_rotation_deg: 3.0 });
        }
        if rng.random_bool(self.blur_probability.clamp(0.0, 1.0)) {
            steps.push(DegradationStep::Blur { sigma: range(&mut rng, self.blur_sigma) });
        }
        if rng.random_bool(self.fade_probability.clamp(0.0, 1.0)) {
            steps.push(DegradationStep::ContrastFade {
                contrast: range(&mut rng, self.fade_contrast),
                brightness: range(&mut rng, self.fade_brightness),
            });
        }
        steps.push(DegradationStep::GaussianNoise { sigma: range(&mut rng, self.noise_sigma) });
        DegradationRecipe { steps, seed: rng.random() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ssim;
    use crate::synthdata::master::gen_master_print;
    use crate::synthdata::orientation::{gen_orientation_field, OrientationParams};

    fn print_at(seed: u64, freq: f64) -> GrayImage {
        let o = gen_orientation_field(seed, 64, 64, 16, &OrientationParams::default()).unwrap();
        gen_master_print(&o, freq, seed).unwrap()
    }

    fn print(seed: u64) -> GrayImage {
        print_at(seed, 0.11)
    }

    #[test]
    fn empty_recipe_is_identity() {
        let img = print(1);
        assert_eq!(degrade(&img, &DegradationRecipe::new(vec![], 3)).unwrap(), img);
    }

    #[test]
    fn noise_lowers_ssim() {
        // wide ridges (period ~16 px): local contrast comparable to a raw capture
        let img = print_at(2, 0.06);
        let recipe = DegradationRecipe::new(vec![DegradationStep::GaussianNoise { sigma: 0.1 }], 8);
        let out = degrade(&img, &recipe).unwrap();
        let s = ssim(&out, &img).unwrap();
        assert!(s < 0.9, "ssim {s}");
    }

    #[test]
    fn every_kind_is_deterministic_and_clipped() {
        let img = print(3);
        let steps = vec![
            DegradationStep::DryErosion { coverage: 0.4, radius: 1 },
            DegradationStep::WetDilation { coverage: 0.3, radius: 2 },
            DegradationStep::BlobOcclusion { count: 3, min_radius: 0.05, max_radius: 0.1, intensity: 0.0 },
            DegradationStep::AffineJitter { max_shift: 3.0, max_rotation_deg: 4.0 },
            DegradationStep::Blur { sigma: 1.0 },
            DegradationStep::ContrastFade { contrast: 0.5, brightness: 0.1 },
            DegradationStep::GaussianNoise { sigma: 0.2 },
        ];
        let recipe = DegradationRecipe::new(steps, 42);
        let a = degrade(&img, &recipe).unwrap();
        assert_eq!(a, degrade(&img, &recipe).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, img);
    }

    #[test]
    fn unknown_kind_and_bad_ranges_are_config_errors() {
        let bad = r#"{"steps":[{"kind":"lens_flare","amount":1.0}],"seed":1}"#;
        assert!(matches!(DegradationRecipe::from_json(bad), Err(Error::Config(_))));
        let out_of_range = r#"{"steps":[{"kind":"gaussian_noise","sigma":3.0}],"seed":1}"#;
        assert!(matches!(DegradationRecipe::from_json(out_of_range), Err(Error::Config(_))));
        let good = r#"{"steps":[{"kind":"blur","sigma":1.5}],"seed":1}"#;
        assert_eq!(DegradationRecipe::from_json(good).unwrap().steps.len(), 1);
    }

    #[test]
    fn sampled_recipes_are_valid() {
        let profile = DegradationProfile::default();
        for seed in 0..200 {
            let r = profile.sample(seed);
            r.validate().unwrap();
            assert_eq!(r, profile.sample(seed));
        }
    }
}
