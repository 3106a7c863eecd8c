//! Block-wise ridge orientation fields: synthesis and gradient-based estimation.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{separable, sobel, Edge, GrayImage};
use crate::seed::rng_from;

/// Undirected ridge angle per block, in `[0, pi)`.
///
/// Angles are measured from the +x axis toward +y (raster coordinates), and
/// describe the direction the ridges run in, not the gradient direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationField {
    pub height: usize,
    pub width: usize,
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub theta: Vec<f64>,
}

/// Wraps an angle into `[0, pi)`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = a.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two undirected angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

impl OrientationField {
    pub fn constant(height: usize, width: usize, block_size: usize, theta: f64) -> Self {
        let rows = height.div_ceil(block_size);
        let cols = width.div_ceil(block_size);
        OrientationField {
            height,
            width,
            block_size,
            rows,
            cols,
            theta: vec![wrap_pi(theta); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.theta[row * self.cols + col]
    }

    /// Block containing pixel `(y, x)`.
    #[inline]
    pub fn block_of(&self, y: usize, x: usize) -> (usize, usize) {
        (
            (y / self.block_size).min(self.rows - 1),
            (x / self.block_size).min(self.cols - 1),
        )
    }

    /// Block-center pixel coordinates `(y, x)`.
    pub fn block_center(&self, row: usize, col: usize) -> (f64, f64) {
        let b = self.block_size as f64;
        let cy = ((row as f64 + 0.5) * b).min((self.height as f64 + row as f64 * b) / 2.0);
        let cx = ((col as f64 + 0.5) * b).min((self.width as f64 + col as f64 * b) / 2.0);
        (cy - 0.5, cx - 0.5)
    }

    /// Orientation at a pixel, bilinearly interpolated in the doubled-angle
    /// domain between block centers.
    pub fn angle_at(&self, y: f64, x: f64) -> f64 {
        let b = self.block_size as f64;
        let gy = ((y + 0.5) / b - 0.5).clamp(0.0, (self.rows - 1) as f64);
        let gx = ((x + 0.5) / b - 0.5).clamp(0.0, (self.cols - 1) as f64);
        let (r0, c0) = (gy.floor() as usize, gx.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(self.rows - 1), (c0 + 1).min(self.cols - 1));
        let (fy, fx) = (gy - r0 as f64, gx - c0 as f64);
        let mut vc = 0.0;
        let mut vs = 0.0;
        for (r, c, wgt) in [
            (r0, c0, (1.0 - fy) * (1.0 - fx)),
            (r0, c1, (1.0 - fy) * fx),
            (r1, c0, fy * (1.0 - fx)),
            (r1, c1, fy * fx),
        ] {
            let t = 2.0 * self.get(r, c);
            vc += wgt * t.cos();
            vs += wgt * t.sin();
        }
        wrap_pi(0.5 * vs.atan2(vc))
    }
}

/// Parameters of the synthetic orientation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationParams {
    /// Number of low-frequency cosine terms; 0 gives a constant field.
    pub terms: usize,
    /// Total angular amplitude (radians) shared across the terms.
    pub amplitude: f64,
    /// Spatial frequency range of each term, in cycles per image side.
    pub cycles: (f64, f64),
    /// Adds one loop-type singularity (half-angle `atan2` pattern).
    pub core: bool,
    /// Fixed base angle; drawn uniformly when absent.
    pub base_angle: Option<f64>,
}

impl Default for OrientationParams {
    fn default() -> Self {
        OrientationParams {
            terms: 3,
            amplitude: 0.5,
            cycles: (0.2, 0.8),
            core: true,
            base_angle: None,
        }
    }
}

impl OrientationParams {
    pub fn constant(angle: f64) -> Self {
        OrientationParams {
            terms: 0,
            core: false,
            base_angle: Some(angle),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.terms > 4 {
            return Err(Error::Config(format!("at most 4 orientation terms, got {}", self.terms)));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::Config("orientation amplitude must lie in [0, 1]".into()));
        }
        if !(self.cycles.0 > 0.0 && self.cycles.0 <= self.cycles.1 && self.cycles.1 <= 1.0) {
            return Err(Error::Config("orientation cycles must satisfy 0 < lo <= hi <= 1".into()));
        }
        Ok(())
    }
}

/// Where a synthesized field's singularity sits, if it has one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Singularity {
    pub y: f64,
    pub x: f64,
}

/// Synthesizes a smooth orientation field: a base angle plus a few
/// low-frequency cosine perturbations and an optional core singularity.
pub fn gen_orientation_field(
    seed: u64,
    height: usize,
    width: usize,
    block_size: usize,
    params: &OrientationParams,
) -> Result<OrientationField> {
    gen_orientation_field_with_core(seed, height, width, block_size, params).map(|(f, _)| f)
}

pub fn gen_orientation_field_with_core(
    seed: u64,
    height: usize,
    width: usize,
    block_size: usize,
    params: &OrientationParams,
) -> Result<(OrientationField, Option<Singularity>)> {
    if height < 64 || width < 64 {
        return Err(Error::Contract(format!(
            "orientation synthesis needs at least 64x64, got {height}x{width}"
        )));
    }
    if block_size == 0 {
        return Err(Error::Config("block size must be positive".into()));
    }
    params.validate()?;
    let mut rng = rng_from(seed);
    let base = params.base_angle.unwrap_or_else(|| rng.random_range(0.0..PI));
    struct Term {
        amp: f64,
        fy: f64,
        fx: f64,
        phase: f64,
    }
    let mut weights: Vec<f64> = (0..params.terms).map(|_| rng.random_range(0.5..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= params.amplitude / wsum);
    let terms: Vec<Term> = weights
        .into_iter()
        .map(|amp| {
            let cyc = rng.random_range(params.cycles.0..=params.cycles.1);
            let dir = rng.random_range(0.0..TAU);
            Term {
                amp,
                fy: cyc * dir.sin(),
                fx: cyc * dir.cos(),
                phase: rng.random_range(0.0..TAU),
            }
        })
        .collect();
    let core = params.core.then(|| Singularity {
        y: rng.random_range(0.3..0.7) * height as f64,
        x: rng.random_range(0.3..0.7) * width as f64,
    });

    let mut field = OrientationField::constant(height, width, block_size, 0.0);
    for r in 0..field.rows {
        for c in 0..field.cols {
            let (y, x) = field.block_center(r, c);
            let (u, v) = (x / width as f64, y / height as f64);
            let mut t = base;
            for term in &terms {
                t += term.amp * (TAU * (term.fx * u + term.fy * v) + term.phase).cos();
            }
            if let Some(s) = core {
                t += 0.5 * (y - s.y).atan2(x - s.x);
            }
            field.theta[r * field.cols + c] = wrap_pi(t);
        }
    }
    Ok((field, core))
}

/// Gradient least-squares orientation estimate with doubled-angle smoothing.
///
/// Per block, the dominant gradient direction is
/// `0.5 atan2(sum 2 gx gy, sum (gx^2 - gy^2))` from Sobel derivatives; the ridge
/// runs perpendicular to it. Block moments are smoothed with a Gaussian over
/// neighboring blocks (sigma 1 block) before taking the angle, and blocks with
/// no gradient energy are filled from their neighbors.
pub fn estimate_orientation(img: &GrayImage, block: usize) -> Result<OrientationField> {
    if !(8..=32).contains(&block) {
        return Err(Error::Contract(format!("block size {block} outside [8, 32]")));
    }
    let (h, w) = img.dims();
    let (gx, gy) = sobel(img.data(), h, w);
    let mut field = OrientationField::constant(h, w, block, 0.0);
    let (rows, cols) = (field.rows, field.cols);
    let mut vx = vec![0.0; rows * cols];
    let mut vy = vec![0.0; rows * cols];
    let mut energy = vec![0.0; rows * cols];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let k = (y / block) * cols + x / block;
            vx[k] += 2.0 * gx[i] * gy[i];
            vy[k] += gx[i] * gx[i] - gy[i] * gy[i];
            energy[k] += gx[i] * gx[i] + gy[i] * gy[i];
        }
    }
    let max_energy = energy.iter().cloned().fold(0.0, f64::max);
    let flat: Vec<bool> = energy.iter().map(|&e| e <= 1e-9 * max_energy.max(1e-300)).collect();

    let kernel = [0.27406862, 0.45186276, 0.27406862]; // sigma = 1 block, radius 1
    let sx = separable(&vx, rows, cols, &kernel, &kernel, Edge::Clamp);
    let sy = separable(&vy, rows, cols, &kernel, &kernel, Edge::Clamp);

    let mut valid = vec![false; rows * cols];
    for k in 0..rows * cols {
        let mag = (sx[k] * sx[k] + sy[k] * sy[k]).sqrt();
        if !flat[k] && mag > 1e-12 * max_energy.max(1e-300) {
            let grad_dir = 0.5 * sx[k].atan2(sy[k]);
            field.theta[k] = wrap_pi(grad_dir + PI / 2.0);
            valid[k] = true;
        }
    }
    inpaint_angles(&mut field.theta, &mut valid, rows, cols);
    Ok(field)
}

/// Fills invalid blocks with the doubled-angle mean of valid 8-neighbors,
/// growing inward until every block is set. With no valid block at all the
/// field is left at zero.
fn inpaint_angles(theta: &mut [f64], valid: &mut [bool], rows: usize, cols: usize) {
    if !valid.iter().any(|&v| v) {
        theta.iter_mut().for_each(|t| *t = 0.0);
        return;
    }
    while valid.iter().any(|&v| !v) {
        let snapshot = valid.to_vec();
        let mut changed = false;
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if snapshot[k] {
                    continue;
                }
                let (mut vc, mut vs, mut n) = (0.0, 0.0, 0);
                for (rr, cc) in neighbors(r, c, rows, cols) {
                    let j = rr * cols + cc;
                    if snapshot[j] {
                        vc += (2.0 * theta[j]).cos();
                        vs += (2.0 * theta[j]).sin();
                        n += 1;
                    }
                }
                if n > 0 {
                    theta[k] = wrap_pi(0.5 * vs.atan2(vc));
                    valid[k] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

pub(crate) fn neighbors(
    r: usize,
    c: usize,
    rows: usize,
    cols: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let r0 = r.saturating_sub(1);
    let c0 = c.saturating_sub(1);
    let r1 = (r + 1).min(rows - 1);
    let c1 = (c + 1).min(cols - 1);
    (r0..=r1)
        .flat_map(move |rr| (c0..=c1).map(move |cc| (rr, cc)))
        .filter(move |&(rr, cc)| (rr, cc) != (r, c))
}
