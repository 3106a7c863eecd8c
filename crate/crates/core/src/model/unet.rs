use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::seed::{derive_seed, rng_from};

/// Shape of the enhancement U-Net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub depth: usize,
    pub convs_per_level: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub use_depthwise: bool,
    pub bottleneck_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 5,
            convs_per_level: 2,
            base_channels: 16,
            input_size: 128,
            use_depthwise: true,
            bottleneck_dim: 4096,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.convs_per_level == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "unet needs depth >= 2, convs_per_level >= 1 and base_channels >= 1".into(),
            ));
        }
        let stride = 1usize << (self.depth - 1);
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^(depth-1) = {stride}",
                self.input_size
            )));
        }
        let area = self.bottleneck_side() * self.bottleneck_side();
        if self.bottleneck_dim == 0 || self.bottleneck_dim % area != 0 {
            return Err(Error::Config(format!(
                "bottleneck_dim {} is not a multiple of the {area}-pixel bottleneck area",
                self.bottleneck_dim
            )));
        }
        Ok(())
    }

    /// Feature channels at encoder level `l`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_side(&self) -> usize {
        self.input_size >> (self.depth - 1)
    }

    /// Channels of the 1x1-reduced bottleneck tensor.
    pub fn reduced_channels(&self) -> usize {
        self.bottleneck_dim / (self.bottleneck_side() * self.bottleneck_side())
    }
}

pub(crate) fn he_normal<T: Scalar>(
    set: &mut ParamSet<T>,
    seed: u64,
    name: &str,
    shape: Vec<usize>,
    fan_in: usize,
) -> Result<()> {
    scaled_normal(set, seed, name, shape, 2.0 / fan_in as f64)
}

fn scaled_normal<T: Scalar>(
    set: &mut ParamSet<T>,
    seed: u64,
    name: &str,
    shape: Vec<usize>,
    variance: f64,
) -> Result<()> {
    let n: usize = shape.iter().product();
    let std = variance.sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut rng = rng_from(derive_seed(seed, &format!("init/{name}"), &[]));
    let data = (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
    set.insert(name, shape, data)?;
    Ok(())
}

pub(crate) fn zeros<T: Scalar>(set: &mut ParamSet<T>, name: &str, n: usize) -> Result<()> {
    set.insert(name, vec![n], vec![T::zero(); n])?;
    Ok(())
}

fn init_conv<T: Scalar>(
    set: &mut ParamSet<T>,
    seed: u64,
    prefix: &str,
    cin: usize,
    cout: usize,
    depthwise: bool,
) -> Result<()> {
    if depthwise {
        // No nonlinearity sits between the depthwise and pointwise halves, so
        // only the pointwise half carries the ReLU gain.
        scaled_normal(set, seed, &format!("{prefix}.dw.weight"), vec![cin, 3, 3], 1.0 / 9.0)?;
        zeros(set, &format!("{prefix}.dw.bias"), cin)?;
        init_pointwise(set, seed, &format!("{prefix}.pw"), cin, cout)
    } else {
        he_normal(set, seed, &format!("{prefix}.weight"), vec![cout, cin, 3, 3], cin * 9)?;
        zeros(set, &format!("{prefix}.bias"), cout)
    }
}

fn init_pointwise<T: Scalar>(
    set: &mut ParamSet<T>,
    seed: u64,
    prefix: &str,
    cin: usize,
    cout: usize,
) -> Result<()> {
    he_normal(set, seed, &format!("{prefix}.weight"), vec![cout, cin], cin)?;
    zeros(set, &format!("{prefix}.bias"), cout)
}

// The first convolution sees a single input channel, where a depthwise
// factorization would collapse to one filter, so it is always dense.
fn is_depthwise(cfg: &UNetConfig, level: usize, conv: usize) -> bool {
    cfg.use_depthwise && !(level == 0 && conv == 0)
}

/// He-initialized `encoder.*` and `decoder.*` blocks for `cfg`.
pub fn init_unet<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut set = ParamSet::new();
    let d = cfg.depth;
    for l in 0..d {
        for j in 0..cfg.convs_per_level {
            let cin = match (l, j) {
                (0, 0) => 1,
                (_, 0) => cfg.channels(l - 1),
                _ => cfg.channels(l),
            };
            let prefix = format!("encoder.level{l}.conv{j}");
            init_conv(&mut set, seed, &prefix, cin, cfg.channels(l), is_depthwise(cfg, l, j))?;
        }
    }
    let (top, r) = (cfg.channels(d - 1), cfg.reduced_channels());
    // Layers not followed by a ReLU use unit fan-in gain.
    scaled_normal(&mut set, seed, "encoder.reduce.weight", vec![r, top], 1.0 / top as f64)?;
    zeros(&mut set, "encoder.reduce.bias", r)?;
    init_pointwise(&mut set, seed, "decoder.expand", r, top)?;
    for l in (0..d - 1).rev() {
        let c = cfg.channels(l);
        init_pointwise(&mut set, seed, &format!("decoder.level{l}.up"), cfg.channels(l + 1), c)?;
        for j in 0..cfg.convs_per_level {
            let cin = if j == 0 { 2 * c } else { c };
            let prefix = format!("decoder.level{l}.conv{j}");
            init_conv(&mut set, seed, &prefix, cin, c, cfg.use_depthwise)?;
        }
    }
    let c0 = cfg.channels(0);
    scaled_normal(&mut set, seed, "decoder.head.weight", vec![1, c0], 1.0 / c0 as f64)?;
    zeros(&mut set, "decoder.head.bias", 1)?;
    Ok(set)
}

fn conv_block<T: Scalar>(tape: &mut Tape<T>, prefix: &str, x: Var, depthwise: bool) -> Result<Var> {
    let y = if depthwise {
        let (w, b) = (tape.param(&format!("{prefix}.dw.weight"))?, tape.param(&format!("{prefix}.dw.bias"))?);
        let y = tape.depthwise_conv(x, w, b)?;
        let (w, b) = (tape.param(&format!("{prefix}.pw.weight"))?, tape.param(&format!("{prefix}.pw.bias"))?);
        tape.pointwise_conv(y, w, b)?
    } else {
        let (w, b) = (tape.param(&format!("{prefix}.weight"))?, tape.param(&format!("{prefix}.bias"))?);
        tape.conv3x3(x, w, b)?
    };
    Ok(tape.relu(y))
}

fn pointwise<T: Scalar>(tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var> {
    let (w, b) = (tape.param(&format!("{prefix}.weight"))?, tape.param(&format!("{prefix}.bias"))?);
    tape.pointwise_conv(x, w, b)
}

fn check_input<T: Scalar>(tape: &Tape<T>, cfg: &UNetConfig, x: Var) -> Result<()> {
    let s = tape.value(x).shape;
    if s[1] != 1 || s[2] != cfg.input_size || s[3] != cfg.input_size {
        return Err(Error::Contract(format!(
            "unet expects [n, 1, {0}, {0}] input, got {s:?}",
            cfg.input_size
        )));
    }
    Ok(())
}

/// Records the encoder on `tape`. Returns the flattened bottleneck
/// `[n, bottleneck_dim]` and the per-level skip tensors.
pub fn encoder_on_tape<T: Scalar>(tape: &mut Tape<T>, cfg: &UNetConfig, x: Var) -> Result<(Var, Vec<Var>)> {
    check_input(tape, cfg, x)?;
    let mut skips = Vec::with_capacity(cfg.depth - 1);
    let mut h = x;
    for l in 0..cfg.depth {
        if l > 0 {
            h = tape.max_pool(h)?;
        }
        for j in 0..cfg.convs_per_level {
            h = conv_block(tape, &format!("encoder.level{l}.conv{j}"), h, is_depthwise(cfg, l, j))?;
        }
        if l + 1 < cfg.depth {
            skips.push(h);
        }
    }
    let reduced = pointwise(tape, "encoder.reduce", h)?;
    Ok((tape.flatten(reduced), skips))
}

/// Records the full U-Net. Returns `(enhanced, bottleneck)`.
pub fn unet_on_tape<T: Scalar>(tape: &mut Tape<T>, cfg: &UNetConfig, x: Var) -> Result<(Var, Var)> {
    let (bottleneck, skips) = encoder_on_tape(tape, cfg, x)?;
    let n = tape.value(x).batch();
    let side = cfg.bottleneck_side();
    let spatial = tape.reshape(bottleneck, [n, cfg.reduced_channels(), side, side])?;
    let mut h = pointwise(tape, "decoder.expand", spatial)?;
    h = tape.relu(h);
    for l in (0..cfg.depth - 1).rev() {
        h = tape.upsample(h);
        h = pointwise(tape, &format!("decoder.level{l}.up"), h)?;
        h = tape.relu(h);
        h = tape.concat(&[h, skips[l]])?;
        for j in 0..cfg.convs_per_level {
            h = conv_block(tape, &format!("decoder.level{l}.conv{j}"), h, cfg.use_depthwise)?;
        }
    }
    let logits = pointwise(tape, "decoder.head", h)?;
    let out = tape.sigmoid(logits);
    Ok((out, bottleneck))
}

/// Packs equally sized images into an `[n, 1, s, s]` tensor.
pub fn images_to_tensor<T: Scalar>(images: &[&GrayImage], size: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.dims() != (size, size) {
            return Err(Error::Contract(format!(
                "expected {size}x{size} image, got {:?}",
                img.dims()
            )));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(v)));
    }
    Ok(Tensor::from_vec([images.len(), 1, size, size], data))
}

/// Splits an `[n, 1, h, w]` tensor into images, clipping to [0, 1].
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Vec<GrayImage> {
    let [_, c, h, w] = t.shape;
    assert_eq!(c, 1, "single-channel tensor expected");
    (0..t.batch())
        .map(|n| {
            let data = t.item(n).iter().map(|v| v.as_f64()).collect();
            GrayImage::from_vec_clipped(h, w, data)
        })
        .collect()
}

/// Enhanced images and bottleneck vectors for a batch.
pub fn unet_forward(
    params: &ParamSet<f32>,
    cfg: &UNetConfig,
    images: &[&GrayImage],
) -> Result<(Vec<GrayImage>, Vec<Vec<f32>>)> {
    let mut tape = Tape::new(params);
    let x = tape.input(images_to_tensor(images, cfg.input_size)?);
    let (out, bottleneck) = unet_on_tape(&mut tape, cfg, x)?;
    let b = tape.value(bottleneck);
    let feats = (0..b.batch()).map(|n| b.item(n).to_vec()).collect();
    Ok((tensor_to_images(tape.value(out)), feats))
}

/// Bottleneck vectors for a batch using only the encoder blocks.
pub fn encoder_forward(params: &ParamSet<f32>, cfg: &UNetConfig, images: &[&GrayImage]) -> Result<Vec<Vec<f32>>> {
    let mut tape = Tape::new(params);
    let x = tape.input(images_to_tensor(images, cfg.input_size)?);
    let (bottleneck, _) = encoder_on_tape(&mut tape, cfg, x)?;
    let b = tape.value(bottleneck);
    Ok((0..b.batch()).map(|n| b.item(n).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn noise(size: usize, seed: u64) -> GrayImage {
        let mut rng = rng_from(seed);
        GrayImage::from_fn(size, size, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn shapes_and_bottleneck_width() {
        for size in [64, 128] {
            let cfg = UNetConfig {
                input_size: size,
                ..UNetConfig::default()
            };
            let p = init_unet::<f32>(&cfg, 1).unwrap();
            let img = noise(size, 2);
            let (out, feats) = unet_forward(&p, &cfg, &[&img]).unwrap();
            assert_eq!(out[0].dims(), (size, size));
            assert_eq!(feats[0].len(), 4096);
            assert_eq!(encoder_forward(&p, &cfg, &[&img]).unwrap(), feats);
        }
        assert_eq!(UNetConfig::default().reduced_channels(), 64);
    }

    #[test]
    fn fresh_net_output_is_finite_and_mid_range() {
        let cfg = UNetConfig {
            input_size: 64,
            ..UNetConfig::default()
        };
        for seed in 0..10 {
            let p = init_unet::<f32>(&cfg, seed).unwrap();
            let (out, feats) = unet_forward(&p, &cfg, &[&noise(64, 100 + seed)]).unwrap();
            assert!(feats[0].iter().all(|v| v.is_finite()));
            let mean = out[0].mean();
            assert!(mean > 0.1 && mean < 0.9, "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn encoder_is_deterministic_and_separates_inputs() {
        let cfg = UNetConfig {
            input_size: 64,
            ..UNetConfig::default()
        };
        let p = init_unet::<f32>(&cfg, 5).unwrap();
        assert_eq!(p.digest(), init_unet::<f32>(&cfg, 5).unwrap().digest());
        for t in 0..10 {
            let (a, b) = (noise(64, 2 * t), noise(64, 2 * t + 1));
            let fa = encoder_forward(&p, &cfg, &[&a]).unwrap();
            assert_eq!(fa, encoder_forward(&p, &cfg, &[&a]).unwrap());
            assert_ne!(fa, encoder_forward(&p, &cfg, &[&b]).unwrap());
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = UNetConfig::default();
        let p = init_unet::<f32>(&UNetConfig { input_size: 64, ..cfg.clone() }, 0).unwrap();
        let err = encoder_forward(&p, &UNetConfig { input_size: 64, ..cfg.clone() }, &[&noise(32, 0)]);
        assert!(matches!(err, Err(Error::Contract(_))));
        assert!(UNetConfig { input_size: 100, ..cfg.clone() }.validate().is_err());
        assert!(UNetConfig { bottleneck_dim: 4000, ..cfg }.validate().is_err());
    }

    #[test]
    fn dense_variant_builds() {
        let cfg = UNetConfig {
            input_size: 32,
            base_channels: 4,
            use_depthwise: false,
            bottleneck_dim: 16,
            ..UNetConfig::default()
        };
        let p = init_unet::<f32>(&cfg, 0).unwrap();
        let (out, feats) = unet_forward(&p, &cfg, &[&noise(32, 0)]).unwrap();
        assert_eq!(out[0].dims(), (32, 32));
        assert_eq!(feats[0].len(), 16);
    }
}
