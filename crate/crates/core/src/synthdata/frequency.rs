//! Local ridge frequency from oriented intensity projections ("x-signatures").

use serde::{Deserialize, Serialize};

use super::orientation::{neighbors, OrientationField};
use crate::error::{Error, Result};
use crate::imaging::{bilinear_raw, GrayImage};

/// Lowest accepted ridge frequency (period 25 px).
pub const MIN_FREQUENCY: f64 = 1.0 / 25.0;
/// Highest accepted ridge frequency (period 3 px).
pub const MAX_FREQUENCY: f64 = 1.0 / 3.0;

/// Per-block ridge frequency in cycles/pixel. `None` marks blocks the
/// estimator rejected; [`estimate_frequency`] never returns such blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMap {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub freq: Vec<Option<f64>>,
}

impl FrequencyMap {
    pub fn constant(rows: usize, cols: usize, block_size: usize, f: f64) -> Self {
        FrequencyMap {
            block_size,
            rows,
            cols,
            freq: vec![Some(f); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.freq[row * self.cols + col]
    }
}

/// Signature length along the ridge normal, in pixels. Long enough to hold
/// at least two periods of the slowest accepted frequency.
fn signature_length(block: usize) -> usize {
    (4 * block).max(56)
}

/// Estimates ridge frequency per block.
///
/// For each block an oriented window (length along the ridge normal, block
/// width along the ridge) is averaged along the ridge direction into a 1-D
/// signature. Peaks of the lightly smoothed signature are located with
/// parabolic refinement and the frequency is `(peaks - 1) / (last - first)`.
/// Out-of-range estimates are marked invalid and replaced by the median of
/// valid neighbors.
pub fn estimate_frequency(
    img: &GrayImage,
    orient: &OrientationField,
    block: usize,
) -> Result<FrequencyMap> {
    if orient.block_size != block || orient.height != img.height() || orient.width != img.width() {
        return Err(Error::Contract(
            "orientation field does not cover the image at this block size".into(),
        ));
    }
    let (h, w) = img.dims();
    let (rows, cols) = (orient.rows, orient.cols);
    let len = signature_length(block);
    let mut freq = vec![None; rows * cols];
    let mut signature = vec![f64::NAN; len];
    for r in 0..rows {
        for c in 0..cols {
            let (cy, cx) = orient.block_center(r, c);
            let theta = orient.get(r, c);
            let (s, co) = theta.sin_cos();
            // ridge direction (co, s), normal (-s, co), in (x, y)
            for (k, slot) in signature.iter_mut().enumerate() {
                let t = k as f64 - (len as f64 - 1.0) / 2.0;
                let (mut acc, mut n) = (0.0, 0usize);
                for j in 0..block {
                    let u = j as f64 - (block as f64 - 1.0) / 2.0;
                    let x = cx - t * s + u * co;
                    let y = cy + t * co + u * s;
                    let v = bilinear_raw(img.data(), h, w, y, x, f64::NAN);
                    if v.is_finite() {
                        acc += v;
                        n += 1;
                    }
                }
                *slot = if 2 * n >= block { acc / n as f64 } else { f64::NAN };
            }
            freq[r * cols + c] = signature_frequency(&signature)
                .filter(|f| *f > MIN_FREQUENCY && *f < MAX_FREQUENCY);
        }
    }
    let mut map = FrequencyMap {
        block_size: block,
        rows,
        cols,
        freq,
    };
    inpaint_median(&mut map)?;
    Ok(map)
}

/// Frequency of the longest finite run of a signature, if it shows at least
/// two clear peaks.
fn signature_frequency(sig: &[f64]) -> Option<f64> {
    let (mut best, mut start) = ((0, 0), None);
    for (i, v) in sig.iter().enumerate() {
        match (v.is_finite(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s > best.1 - best.0 {
                    best = (s, i);
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if sig.len() - s > best.1 - best.0 {
            best = (s, sig.len());
        }
    }
    let run = &sig[best.0..best.1];
    if run.len() < 16 {
        return None;
    }
    let smooth: Vec<f64> = (0..run.len())
        .map(|i| {
            let a = run[i.saturating_sub(1)];
            let b = run[(i + 1).min(run.len() - 1)];
            0.25 * a + 0.5 * run[i] + 0.25 * b
        })
        .collect();
    let (lo, hi) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo < 1e-3 {
        return None;
    }
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let mut peaks = Vec::new();
    for i in 1..smooth.len() - 1 {
        let (a, b, c) = (smooth[i - 1], smooth[i], smooth[i + 1]);
        if b > a && b >= c && b > mean {
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
            peaks.push(i as f64 + offset.clamp(-0.5, 0.5));
        }
    }
    if peaks.len() < 2 {
        return None;
    }
    let span = peaks[peaks.len() - 1] - peaks[0];
    (span > 0.0).then(|| (peaks.len() - 1) as f64 / span)
}

fn inpaint_median(map: &mut FrequencyMap) -> Result<()> {
    if map.freq.iter().all(Option::is_none) {
        return Err(Error::Degenerate("no block has a measurable ridge frequency".into()));
    }
    let (rows, cols) = (map.rows, map.cols);
    while map.freq.iter().any(Option::is_none) {
        let snapshot = map.freq.clone();
        for r in 0..rows {
            for c in 0..cols {
                if snapshot[r * cols + c].is_some() {
                    continue;
                }
                let mut vals: Vec<f64> = neighbors(r, c, rows, cols)
                    .filter_map(|(rr, cc)| snapshot[rr * cols + cc])
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                vals.sort_by(f64::total_cmp);
                let m = vals.len();
                let med = if m % 2 == 1 {
                    vals[m / 2]
                } else {
                    0.5 * (vals[m / 2 - 1] + vals[m / 2])
                };
                map.freq[r * cols + c] = Some(med);
            }
        }
    }
    Ok(())
}
