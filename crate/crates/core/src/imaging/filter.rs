//! Spatial filtering and resampling on raw row-major buffers.
//!
//! Coordinates follow the raster convention: `x` grows to the right, `y` grows
//! downward, and angles are measured from the +x axis toward +y.

use super::GrayImage;

/// Out-of-bounds policy for neighborhood operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Edge {
    /// Mirror about the border pixel (`-1 -> 1`).
    Reflect,
    /// Repeat the border pixel.
    Clamp,
}

#[inline]
fn edge_index(i: isize, n: usize, edge: Edge) -> usize {
    let n = n as isize;
    match edge {
        Edge::Clamp => i.clamp(0, n - 1) as usize,
        Edge::Reflect => {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let mut m = i.rem_euclid(period);
            if m >= n {
                m = period - m;
            }
            m as usize
        }
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    gaussian_kernel_radius(sigma, radius as usize)
}

pub(crate) fn gaussian_kernel_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Same-size separable correlation of `src` (h x w) with odd-length kernels.
pub(crate) fn separable(
    src: &[f64],
    h: usize,
    w: usize,
    kx: &[f64],
    ky: &[f64],
    edge: Edge,
) -> Vec<f64> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kx.iter().enumerate() {
                acc += k * row[edge_index(x as isize + t as isize - rx, w, edge)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (t, &k) in ky.iter().enumerate() {
            let sy = edge_index(y as isize + t as isize - ry, h, edge);
            let src_row = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out
}

/// "Valid" separable correlation: output is `(h - ky + 1) x (w - kx + 1)`.
pub(crate) fn separable_valid(
    src: &[f64],
    h: usize,
    w: usize,
    kx: &[f64],
    ky: &[f64],
) -> (Vec<f64>, usize, usize) {
    let ow = w + 1 - kx.len();
    let oh = h + 1 - ky.len();
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kx.iter().zip(&row[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, &k) in ky.iter().enumerate() {
            let src_row = &tmp[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    (out, oh, ow)
}

/// Gaussian blur with reflected borders. `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let (h, w) = img.dims();
    GrayImage::from_vec_clipped(h, w, separable(img.data(), h, w, &k, &k, Edge::Reflect))
}

pub(crate) fn gaussian_blur_raw(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    separable(src, h, w, &k, &k, Edge::Reflect)
}

/// Mean over a `(2r+1)^2` square window, clamped borders.
pub fn box_filter(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let k = vec![1.0 / (2 * radius + 1) as f64; 2 * radius + 1];
    separable(src, h, w, &k, &k, Edge::Clamp)
}

fn rank_filter(img: &GrayImage, radius: usize, pick: fn(f64, f64) -> f64, init: f64) -> GrayImage {
    let (h, w) = img.dims();
    let r = radius as isize;
    let src = img.data();
    let mut tmp = vec![init; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = init;
            for dx in -r..=r {
                acc = pick(acc, src[y * w + edge_index(x as isize + dx, w, Edge::Clamp)]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![init; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = init;
            for dy in -r..=r {
                acc = pick(acc, tmp[edge_index(y as isize + dy, h, Edge::Clamp) * w + x]);
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::from_vec_clipped(h, w, out)
}

/// Grayscale dilation over a square window.
pub fn max_filter(img: &GrayImage, radius: usize) -> GrayImage {
    rank_filter(img, radius, f64::max, f64::NEG_INFINITY)
}

/// Grayscale erosion over a square window.
pub fn min_filter(img: &GrayImage, radius: usize) -> GrayImage {
    rank_filter(img, radius, f64::min, f64::INFINITY)
}

/// Bilinear interpolation at fractional `(y, x)`; `fill` outside the raster.
#[inline]
pub fn bilinear_sample(img: &GrayImage, y: f64, x: f64, fill: f64) -> f64 {
    bilinear_raw(img.data(), img.height(), img.width(), y, x, fill)
}

#[inline]
pub(crate) fn bilinear_raw(src: &[f64], h: usize, w: usize, y: f64, x: f64, fill: f64) -> f64 {
    if !(y > -1.0 && x > -1.0 && y < h as f64 && x < w as f64) {
        return fill;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            fill
        } else {
            src[yy as usize * w + xx as usize]
        }
    };
    // Exact lattice hits skip the zero-weight neighbours.
    let top = if fx == 0.0 {
        at(y0, x0)
    } else {
        at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx
    };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        at(y0 + 1, x0)
    } else {
        at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx
    };
    top * (1.0 - fy) + bottom * fy
}

#[inline]
fn keys_weights(t: f64) -> [f64; 4] {
    // Keys cubic convolution, a = -0.5
    const A: f64 = -0.5;
    let near = |d: f64| ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0;
    let far = |d: f64| ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A;
    [far(1.0 + t), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Cubic-convolution interpolation at fractional `(y, x)`; `fill` outside.
pub(crate) fn bicubic_raw(src: &[f64], h: usize, w: usize, y: f64, x: f64, fill: f64) -> f64 {
    if !(y > -1.0 && x > -1.0 && y < h as f64 && x < w as f64) {
        return fill;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    if ty == 0.0 && tx == 0.0 {
        return bilinear_raw(src, h, w, y, x, fill);
    }
    let (wy, wx) = (keys_weights(ty), keys_weights(tx));
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = 0.0;
    for (i, wyi) in wy.iter().enumerate() {
        let yy = y0 - 1 + i as isize;
        for (j, wxj) in wx.iter().enumerate() {
            let xx = x0 - 1 + j as isize;
            let v = if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                fill
            } else {
                src[yy as usize * w + xx as usize]
            };
            acc += wyi * wxj * v;
        }
    }
    acc
}

/// Inverse-mapping warp: output `(y, x)` takes the source value at `map(y, x)`.
pub fn warp(img: &GrayImage, fill: f64, map: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage {
    let (h, w) = img.dims();
    GrayImage::from_fn(h, w, |y, x| {
        let (sy, sx) = map(y as f64, x as f64);
        bilinear_sample(img, sy, sx, fill)
    })
}

/// Rotates image content by `angle` radians about the raster center, so a
/// structure pointing along direction `t` ends up pointing along `t + angle`.
pub fn rotate(img: &GrayImage, angle: f64, fill: f64) -> GrayImage {
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    warp(img, fill, |y, x| {
        let (dx, dy) = (x - cx, y - cy);
        // inverse rotation
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        (sy, sx)
    })
}

/// Bilinear resize using pixel-center alignment.
pub fn resize_bilinear(img: &GrayImage, height: usize, width: usize) -> GrayImage {
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    let (ih, iw) = img.dims();
    GrayImage::from_fn(height, width, |y, x| {
        let yy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (ih - 1) as f64);
        let xx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (iw - 1) as f64);
        bilinear_sample(img, yy, xx, 0.0)
    })
}

/// Sobel derivatives `(gx, gy)` with clamped borders.
pub fn sobel(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let smooth = [1.0, 2.0, 1.0];
    let diff = [-1.0, 0.0, 1.0];
    let gx = separable(src, h, w, &diff, &smooth, Edge::Clamp);
    let gy = separable(src, h, w, &smooth, &diff, Edge::Clamp);
    (gx, gy)
}
