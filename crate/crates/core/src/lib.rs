//! Enhancement-driven self-supervised pretraining for fingerprint encoders.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod imaging;
pub mod model;
pub mod parallel;
pub mod pretrain;
pub mod probe;
pub mod seed;
pub mod synthdata;

pub use error::{Error, Result};
pub use imaging::GrayImage;

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/synthdata.md")]
    mod synthdata {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/seeds.md")]
    mod seeds {}
}
