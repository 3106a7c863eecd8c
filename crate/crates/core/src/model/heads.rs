use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::unet::{he_normal, zeros};
use crate::error::{Error, Result};

/// Embedding width after the projection head.
pub const EMBEDDING_DIM: usize = 512;

/// A stack of affine layers with ReLU between them (none after the last).
/// Blocks are named `{prefix}.layer{i}.weight` / `.bias`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "an mlp needs input and output widths");
        Mlp {
            prefix: prefix.into(),
            dims,
        }
    }

    /// Embedding head: bottleneck → 1024 → 512 → 512.
    pub fn projection(input_dim: usize) -> Self {
        Mlp::new("projection", vec![input_dim, 1024, EMBEDDING_DIM, EMBEDDING_DIM])
    }

    /// Pair classifier over `[u; v; |u − v|]`.
    pub fn classifier() -> Self {
        Mlp::new("classifier", vec![3 * EMBEDDING_DIM, 256, 1])
    }

    /// Two-layer projector used by the self-supervised baselines.
    pub fn ssl_projector(input_dim: usize, width: usize) -> Self {
        Mlp::new("projector", vec![input_dim, width, width])
    }

    pub fn ssl_predictor(width: usize) -> Self {
        Mlp::new("predictor", vec![width, width, width])
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn init_into<T: Scalar>(&self, set: &mut ParamSet<T>, seed: u64) -> Result<()> {
        for (i, w) in self.dims.windows(2).enumerate() {
            let name = format!("{}.layer{i}", self.prefix);
            he_normal(set, seed, &format!("{name}.weight"), vec![w[1], w[0]], w[0])?;
            zeros(set, &format!("{name}.bias"), w[1])?;
        }
        Ok(())
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut set = ParamSet::new();
        self.init_into(&mut set, seed)?;
        Ok(set)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let width = tape.value(x).item_len();
        if width != self.input_dim() {
            return Err(Error::Contract(format!(
                "{} expects {}-d input, got {width}",
                self.prefix,
                self.input_dim()
            )));
        }
        let layers = self.dims.len() - 1;
        let mut h = x;
        for i in 0..layers {
            let name = format!("{}.layer{i}", self.prefix);
            let w = tape.param(&format!("{name}.weight"))?;
            let b = tape.param(&format!("{name}.bias"))?;
            h = tape.linear(h, w, b)?;
            if i + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Logit for each pair from the concatenation `[u; v; |u − v|]`.
pub fn classifier_on_tape<T: Scalar>(tape: &mut Tape<T>, head: &Mlp, u: Var, v: Var) -> Result<Var> {
    let (du, dv) = (tape.value(u).item_len(), tape.value(v).item_len());
    if du != dv || 3 * du != head.input_dim() {
        return Err(Error::Contract(format!(
            "classifier expects two {}-d embeddings, got {du} and {dv}",
            head.input_dim() / 3
        )));
    }
    let diff = tape.sub(u, v)?;
    let diff = tape.abs(diff);
    let joined = tape.concat(&[u, v, diff])?;
    head.forward(tape, joined)
}
