//! Network definitions, a small reverse-mode differentiation engine,
//! parameter initialization, optimization and checkpoint files.
//!
//! Every network is a function of a [`ParamSet`], a flat list of named
//! blocks. Forward passes are recorded on a [`Tape`], which borrows the
//! parameters immutably; [`Tape::backward`] returns gradients aligned with the
//! set, and an optimizer applies them afterwards.

mod adam;
mod checkpoint;
mod heads;
mod params;
mod scalar;
mod tape;
mod tensor;
mod unet;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Component, Provenance, CHECKPOINT_VERSION};
pub use heads::{classifier_on_tape, Mlp, EMBEDDING_DIM};
pub use params::{Param, ParamGrads, ParamSet};
pub use scalar::Scalar;
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
pub use unet::{
    encoder_forward, encoder_on_tape, images_to_tensor, init_unet, tensor_to_images, unet_forward, unet_on_tape,
    UNetConfig,
};
