//! Stage-one training: enhancement pretraining and the self-supervised
//! baselines, all on the same encoder.

mod config;
mod enhance;
mod log;
mod losses;
mod ssl;

use std::path::Path;

pub use config::{EpochSummary, Method, PretrainConfig};
pub use enhance::{
    enhance_with, fit_enhancement, train_enhancement, EnhanceTrainer, FitOutcome, Pair, PretrainArtifacts,
    DECODER_FILE, ENCODER_FILE, LOG_FILE, SSL_HEAD_FILE,
};
pub use log::{LogRecord, TrainLog};
pub use losses::{
    loss_bce, loss_byol, loss_infonce_queue, loss_l2, loss_ntxent, loss_simsiam, view_pairs, LossGrad, TwoViewGrad,
};
pub use ssl::{ema_update, fit_ssl, projection_std, train_ssl, KeyQueue, SslNets, SslStep, SslTrainer};

use crate::error::Result;
use crate::model::UNetConfig;
use crate::synthdata::Manifest;

/// Runs whichever method `cfg` selects.
pub fn run_pretrain(
    cfg: &PretrainConfig,
    unet: &UNetConfig,
    manifest: &Manifest,
    out_dir: &Path,
    config_digest: &str,
    workers: usize,
) -> Result<PretrainArtifacts> {
    match cfg.method {
        Method::Enhance => train_enhancement(cfg, unet, manifest, out_dir, config_digest),
        _ => train_ssl(cfg, unet, manifest, out_dir, config_digest, workers),
    }
}
