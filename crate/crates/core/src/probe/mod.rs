//! Stage-two probing: verification pairs and a trained head on a frozen
//! encoder.

mod pairs;
mod verifier;

pub use crate::pretrain::loss_bce;
pub use pairs::{imposter_target, make_pairs, PairSample, PairSet, PAIRSET_VERSION};
pub use verifier::{
    cosine, embed, fit_verifier, train_verifier, Embedding, FeaturePairs, FrozenEncoder, ProbeArtifacts, ProbeConfig,
    Verifier, VerifierTrainer, CLASSIFIER_FILE, PROJECTION_FILE,
};
