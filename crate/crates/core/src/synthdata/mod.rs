//! Synthetic fingerprints, degradations, classical enhancement and datasets.
//!
//! The generator stands in for licensed fingerprint corpora: each identity is
//! a master print grown from a random orientation field, each impression a
//! small affine and elastic distortion of it. Externally obtained data can be
//! used instead by writing a [`Manifest`] with the same record schema.

mod augment;
mod dataset;
mod degrade;
mod frequency;
mod gabor;
mod impression;
mod master;
mod orientation;

pub use augment::{augment_view, AugmentPolicy};
pub use dataset::{
    build_dataset, generate_sample, identity_master, largest_remainder, load_split,
    DatasetConfig, GeneratedSample, Manifest, SampleRecord, Split, TargetKind, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use degrade::{degrade, DegradationProfile, DegradationRecipe, DegradationStep};
pub use frequency::{estimate_frequency, FrequencyMap, MAX_FREQUENCY, MIN_FREQUENCY};
pub use gabor::{classical_enhance, classical_enhance_with, gabor_enhance, gabor_kernel, ClassicalParams};
pub use impression::{apply_impression, gen_impression, ncc, ImpressionConfig, ImpressionParams, BACKGROUND};
pub use master::{gen_master_print, gen_master_print_with, MasterParams};
pub use orientation::{
    angle_diff, estimate_orientation, gen_orientation_field, gen_orientation_field_with_core,
    wrap_pi, OrientationField, OrientationParams, Singularity,
};
