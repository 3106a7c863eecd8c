use std::path::Path;

use rand::seq::SliceRandom;

use super::config::{batches, EarlyStopper, EpochSummary, Method, PretrainConfig};
use super::log::TrainLog;
use super::losses::loss_l2;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::model::{
    images_to_tensor, init_unet, save_checkpoint, tensor_to_images, unet_on_tape, Adam, AdamConfig, Checkpoint,
    Component, ParamSet, Provenance, Tape, Tensor, UNetConfig,
};
use crate::seed::{derive_seed, rng_from};
use crate::synthdata::{load_split, Manifest, Split};

/// A degraded input and its enhancement target.
pub type Pair = (GrayImage, GrayImage);

/// Full U-Net plus its optimizer state.
pub struct EnhanceTrainer {
    unet: UNetConfig,
    params: ParamSet<f32>,
    opt: Adam,
    steps: u64,
}

impl EnhanceTrainer {
    pub fn new(unet: &UNetConfig, learning_rate: f64, seed: u64) -> Result<Self> {
        let params = init_unet(unet, seed)?;
        let opt = Adam::new(
            AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            &params,
        );
        Ok(EnhanceTrainer {
            unet: unet.clone(),
            params,
            opt,
            steps: 0,
        })
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn tensors(&self, pairs: &[&Pair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let inputs: Vec<&GrayImage> = pairs.iter().map(|p| &p.0).collect();
        let targets: Vec<&GrayImage> = pairs.iter().map(|p| &p.1).collect();
        Ok((
            images_to_tensor(&inputs, self.unet.input_size)?,
            images_to_tensor(&targets, self.unet.input_size)?,
        ))
    }

    /// One Adam step on a batch; returns the batch L2 before the update.
    pub fn step(&mut self, pairs: &[&Pair]) -> Result<f64> {
        let (x, y) = self.tensors(pairs)?;
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(x);
        let (out, _) = unet_on_tape(&mut tape, &self.unet, xv)?;
        let lg = loss_l2(tape.value(out), &y)?;
        let shape = tape.value(out).shape;
        let grads = tape.backward(&[(out, Tensor::from_vec(shape, lg.grad))]).into_params();
        self.opt.step(&mut self.params, &grads);
        self.steps += 1;
        Ok(lg.loss)
    }

    /// Mean per-pixel L2 over `pairs`, evaluated in batches.
    pub fn eval_loss(&self, pairs: &[Pair], batch_size: usize) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Data("cannot evaluate on an empty split".into()));
        }
        let mut total = 0.0;
        for chunk in pairs.chunks(batch_size.max(1)) {
            let refs: Vec<&Pair> = chunk.iter().collect();
            let (x, y) = self.tensors(&refs)?;
            let mut tape = Tape::new(&self.params);
            let xv = tape.input(x);
            let (out, _) = unet_on_tape(&mut tape, &self.unet, xv)?;
            total += loss_l2(tape.value(out), &y)?.loss * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    }

    pub fn enhance(&self, images: &[&GrayImage]) -> Result<Vec<GrayImage>> {
        enhance_with(&self.params, &self.unet, images)
    }
}

/// Runs the U-Net in `params` over `images`.
pub fn enhance_with(params: &ParamSet<f32>, unet: &UNetConfig, images: &[&GrayImage]) -> Result<Vec<GrayImage>> {
    let mut tape = Tape::new(params);
    let xv = tape.input(images_to_tensor(images, unet.input_size)?);
    let (out, _) = unet_on_tape(&mut tape, unet, xv)?;
    Ok(tensor_to_images(tape.value(out)))
}

/// Best-validation parameters and per-epoch history of a training run.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ParamSet<f32>,
    pub history: Vec<EpochSummary>,
    pub best_epoch: usize,
    /// Optimizer steps taken up to the best epoch.
    pub best_step: u64,
}

/// Trains the U-Net with per-pixel L2 and early stopping on validation loss.
pub fn fit_enhancement(
    cfg: &PretrainConfig,
    unet: &UNetConfig,
    train: &[Pair],
    val: &[Pair],
    log: &mut TrainLog,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("enhancement training needs non-empty train and val splits".into()));
    }
    let lr = cfg.learning_rate();
    let mut trainer = EnhanceTrainer::new(unet, lr, cfg.seed)?;
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best = (trainer.params.clone(), 0u64);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, "pretrain-shuffle", &[epoch as u64])));
        let mut sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let refs: Vec<&Pair> = batch.iter().map(|&i| &train[i]).collect();
            let loss = trainer.step(&refs)?;
            log.record(trainer.steps, "train", loss, lr, None)?;
            sum += loss * batch.len() as f64;
        }
        let val_loss = trainer.eval_loss(val, cfg.batch_size)?;
        log.record(trainer.steps, "val", val_loss, lr, None)?;
        if stopper.observe(epoch, val_loss) {
            best = (trainer.params.clone(), trainer.steps);
        }
        history.push(EpochSummary {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            best_val_loss: stopper.best,
        });
        if stopper.should_stop() {
            break;
        }
    }
    log.flush()?;
    Ok(FitOutcome {
        params: best.0,
        history,
        best_epoch: stopper.best_epoch,
        best_step: best.1,
    })
}

/// Files written by a pretraining run.
#[derive(Clone, Debug)]
pub struct PretrainArtifacts {
    pub encoder: Checkpoint,
    /// Decoder for `enhance`, projector/predictor heads otherwise.
    pub heads: Checkpoint,
    pub history: Vec<EpochSummary>,
}

pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const DECODER_FILE: &str = "decoder.ckpt";
pub const SSL_HEAD_FILE: &str = "ssl_head.ckpt";
pub const LOG_FILE: &str = "train_log.ndjson";

pub(crate) fn split_checkpoints(
    outcome: &FitOutcome,
    unet: &UNetConfig,
    method: Method,
    heads_component: Component,
    heads_architecture: serde_json::Value,
    seed: u64,
    config_digest: &str,
) -> Result<(Checkpoint, Checkpoint)> {
    let provenance = Provenance {
        config_digest: config_digest.to_string(),
        step: outcome.best_step,
        seed,
        method: method.as_str().to_string(),
    };
    let encoder = Checkpoint {
        component: Component::Encoder,
        architecture: serde_json::to_value(unet)?,
        params: outcome.params.subset("encoder."),
        provenance: provenance.clone(),
    };
    let heads = outcome
        .params
        .iter()
        .filter(|p| !p.name.starts_with("encoder."))
        .try_fold(ParamSet::new(), |mut set, p| {
            set.insert(p.name.clone(), p.shape.clone(), p.data.clone())?;
            Ok::<_, Error>(set)
        })?;
    let heads = Checkpoint {
        component: heads_component,
        architecture: heads_architecture,
        params: heads,
        provenance,
    };
    Ok((encoder, heads))
}

/// Trains on the manifest's train/val splits and writes `encoder.ckpt`,
/// `decoder.ckpt` and the training log into `out_dir`.
pub fn train_enhancement(
    cfg: &PretrainConfig,
    unet: &UNetConfig,
    manifest: &Manifest,
    out_dir: &Path,
    config_digest: &str,
) -> Result<PretrainArtifacts> {
    let train = load_split(manifest, Split::Train)?;
    let val = load_split(manifest, Split::Val)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = TrainLog::to_file(out_dir.join(LOG_FILE))?;
    let outcome = fit_enhancement(cfg, unet, &train, &val, &mut log)?;
    let (encoder, decoder) = split_checkpoints(
        &outcome,
        unet,
        Method::Enhance,
        Component::Decoder,
        serde_json::to_value(unet)?,
        cfg.seed,
        config_digest,
    )?;
    save_checkpoint(&encoder, out_dir.join(ENCODER_FILE))?;
    save_checkpoint(&decoder, out_dir.join(DECODER_FILE))?;
    Ok(PretrainArtifacts {
        encoder,
        heads: decoder,
        history: outcome.history,
    })
}
