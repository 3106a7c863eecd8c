use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pairs::PairSet;
use crate::error::{Error, Result};
use crate::imaging::{load_image, GrayImage};
use crate::model::{
    classifier_on_tape, encoder_forward, load_checkpoint, save_checkpoint, sigmoid, Adam, AdamConfig, Checkpoint,
    Component, Mlp, ParamSet, Provenance, Tape, Tensor, UNetConfig, Var, EMBEDDING_DIM,
};
use crate::parallel::par_map;
use crate::pretrain::{loss_bce, EpochSummary, TrainLog};
use crate::seed::{derive_seed, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Present each training pair in a random order every epoch.
    pub random_pair_swap: bool,
    /// Imposter pairs per genuine pair.
    pub pair_ratio: f64,
    /// Most genuine pairs drawn from one identity.
    pub genuine_cap: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 30,
            early_stop_patience: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            random_pair_swap: true,
            pair_ratio: 3.0,
            genuine_cap: 50,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.genuine_cap == 0 {
            return Err(Error::Config("probe epochs, batch_size and genuine_cap must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.pair_ratio > 0.0) {
            return Err(Error::Config("probe learning_rate and pair_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// A 512-d fingerprint representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "embedding must hold {EMBEDDING_DIM} finite values, got {}",
                values.len()
            )));
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

/// Cosine similarity clamped to [-1, 1]; zero vectors give 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Projection head and pair classifier over frozen encoder features.
#[derive(Clone, Debug)]
pub struct Verifier {
    pub projection: Mlp,
    pub classifier: Mlp,
    pub params: ParamSet<f32>,
}

impl Verifier {
    pub fn init(feature_dim: usize, seed: u64) -> Result<Self> {
        let projection = Mlp::projection(feature_dim);
        let classifier = Mlp::classifier();
        let mut params = projection.init(seed)?;
        classifier.init_into(&mut params, seed)?;
        Ok(Verifier {
            projection,
            classifier,
            params,
        })
    }

    /// Rebuilds a verifier from projection and classifier checkpoints.
    pub fn from_checkpoints(projection: &Checkpoint, classifier: &Checkpoint) -> Result<Self> {
        projection.expect_component(Component::Projection)?;
        classifier.expect_component(Component::Classifier)?;
        let mut params = projection.params.clone();
        params.extend(classifier.params.clone())?;
        Ok(Verifier {
            projection: projection.architecture_as()?,
            classifier: classifier.architecture_as()?,
            params,
        })
    }

    fn feature_tensor(&self, rows: &[&[f32]]) -> Result<Tensor<f32>> {
        let d = self.projection.input_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Contract(format!("projection expects {d}-d features, got {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor::matrix(rows.len(), d, data))
    }

    /// Records tied projections of both sides and the classifier logits.
    fn record<'p>(&self, tape: &mut Tape<'p, f32>, a: &[&[f32]], b: &[&[f32]]) -> Result<Var> {
        let xa = tape.input(self.feature_tensor(a)?);
        let xb = tape.input(self.feature_tensor(b)?);
        let u = self.projection.forward(tape, xa)?;
        let v = self.projection.forward(tape, xb)?;
        classifier_on_tape(tape, &self.classifier, u, v)
    }

    /// Classifier logits for pairs in the given order.
    pub fn logits(&self, a: &[&[f32]], b: &[&[f32]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let out = self.record(&mut tape, a, b)?;
        Ok(tape.value(out).data.iter().map(|&v| v as f64).collect())
    }

    /// `sigmoid((logit(a, b) + logit(b, a)) / 2)`, identical for both orders.
    pub fn pair_probabilities(&self, a: &[&[f32]], b: &[&[f32]]) -> Result<Vec<f64>> {
        let ab = self.logits(a, b)?;
        let ba = self.logits(b, a)?;
        Ok(ab.iter().zip(&ba).map(|(x, y)| sigmoid(0.5 * (x + y))).collect())
    }

    pub fn embed_features(&self, rows: &[&[f32]]) -> Result<Vec<Embedding>> {
        let mut tape = Tape::new(&self.params);
        let x = tape.input(self.feature_tensor(rows)?);
        let z = self.projection.forward(&mut tape, x)?;
        let out = tape.value(z);
        (0..out.batch()).map(|n| Embedding::new(out.row(n).to_vec())).collect()
    }

    pub fn checkpoints(&self, provenance: &Provenance) -> Result<(Checkpoint, Checkpoint)> {
        Ok((
            Checkpoint {
                component: Component::Projection,
                architecture: serde_json::to_value(&self.projection)?,
                params: self.params.subset("projection."),
                provenance: provenance.clone(),
            },
            Checkpoint {
                component: Component::Classifier,
                architecture: serde_json::to_value(&self.classifier)?,
                params: self.params.subset("classifier."),
                provenance: provenance.clone(),
            },
        ))
    }
}

/// Pairs expressed as indices into a shared feature table.
#[derive(Clone, Debug)]
pub struct FeaturePairs {
    pub features: Vec<Vec<f32>>,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl FeaturePairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn sides(&self, idx: &[usize], swap: &[bool]) -> (Vec<&[f32]>, Vec<&[f32]>) {
        idx.iter()
            .zip(swap)
            .map(|(&k, &s)| {
                let (i, j) = self.pairs[k];
                let (i, j) = if s { (j, i) } else { (i, j) };
                (self.features[i].as_slice(), self.features[j].as_slice())
            })
            .unzip()
    }

    /// Order-symmetrized genuine probabilities for every pair.
    pub fn probabilities(&self, verifier: &Verifier, batch: usize) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut out = Vec::with_capacity(self.len());
        for chunk in all.chunks(batch.max(1)) {
            let (a, b) = self.sides(chunk, &vec![false; chunk.len()]);
            out.extend(verifier.pair_probabilities(&a, &b)?);
        }
        Ok(out)
    }

    /// Mean BCE of the symmetrized logits.
    pub fn loss(&self, verifier: &Verifier, batch: usize) -> Result<f64> {
        let probs = self.probabilities(verifier, batch)?;
        let logits: Vec<f64> = probs
            .iter()
            .map(|&p| {
                let p = p.clamp(1e-15, 1.0 - 1e-15);
                (p / (1.0 - p)).ln()
            })
            .collect();
        Ok(loss_bce(&logits, &self.labels)?.loss)
    }

    /// Fraction of pairs classified correctly at probability 0.5.
    pub fn accuracy(&self, verifier: &Verifier, batch: usize) -> Result<f64> {
        let probs = self.probabilities(verifier, batch)?;
        let correct = probs
            .iter()
            .zip(&self.labels)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
            .count();
        Ok(correct as f64 / self.len().max(1) as f64)
    }
}

/// Trainable verifier with its optimizer.
pub struct VerifierTrainer {
    pub verifier: Verifier,
    opt: Adam,
    steps: u64,
}

impl VerifierTrainer {
    pub fn new(feature_dim: usize, cfg: &ProbeConfig) -> Result<Self> {
        let verifier = Verifier::init(feature_dim, cfg.seed)?;
        let opt = Adam::new(
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &verifier.params,
        );
        Ok(VerifierTrainer {
            verifier,
            opt,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One BCE step on the selected pairs; `swap[i]` flips pair `i`'s order.
    pub fn step(&mut self, data: &FeaturePairs, idx: &[usize], swap: &[bool]) -> Result<f64> {
        let (a, b) = data.sides(idx, swap);
        let labels: Vec<f64> = idx.iter().map(|&k| data.labels[k]).collect();
        let mut tape = Tape::new(&self.verifier.params);
        let out = self.verifier.record(&mut tape, &a, &b)?;
        let lg = loss_bce(&tape.value(out).data, &labels)?;
        let shape = tape.value(out).shape;
        let grads = tape.backward(&[(out, Tensor::from_vec(shape, lg.grad))]).into_params();
        self.opt.step(&mut self.verifier.params, &grads);
        self.steps += 1;
        Ok(lg.loss)
    }
}

/// Trains projection and classifier; early-stops on validation BCE when a
/// validation set is given.
pub fn fit_verifier(
    cfg: &ProbeConfig,
    train: &FeaturePairs,
    val: Option<&FeaturePairs>,
    log: &mut TrainLog,
) -> Result<(Verifier, Vec<EpochSummary>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("probe needs at least one training pair".into()));
    }
    let dim = train.features.first().map(Vec::len).unwrap_or(0);
    let mut trainer = VerifierTrainer::new(dim, cfg)?;
    let mut best = trainer.verifier.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(derive_seed(cfg.seed, "probe-epoch", &[epoch as u64]));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let swap: Vec<bool> = (0..train.len())
            .map(|_| cfg.random_pair_swap && rng.random_bool(0.5))
            .collect();
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let flips: Vec<bool> = chunk.iter().map(|&k| swap[k]).collect();
            let loss = trainer.step(train, chunk, &flips)?;
            log.record(trainer.steps, "train", loss, cfg.learning_rate, None)?;
            sum += loss * chunk.len() as f64;
        }
        let val_loss = match val {
            Some(v) => v.loss(&trainer.verifier, cfg.batch_size)?,
            None => sum / train.len() as f64,
        };
        log.record(trainer.steps, "val", val_loss, cfg.learning_rate, None)?;
        if val_loss < best_loss {
            best_loss = val_loss;
            best = trainer.verifier.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochSummary {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            best_val_loss: best_loss,
        });
        if val.is_some() && cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
            break;
        }
    }
    log.flush()?;
    Ok((best, history))
}

/// Frozen encoder loaded from a checkpoint.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    pub unet: UNetConfig,
    pub params: ParamSet<f32>,
    pub provenance: Provenance,
}

impl FrozenEncoder {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_component(Component::Encoder)?;
        Ok(FrozenEncoder {
            unet: ckpt.architecture_as()?,
            params: ckpt.params.clone(),
            provenance: ckpt.provenance.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path, Component::Encoder)?)
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn features(&self, images: &[&GrayImage]) -> Result<Vec<Vec<f32>>> {
        encoder_forward(&self.params, &self.unet, images)
    }

    /// Bottleneck features for image files, batched and spread over workers.
    pub fn features_for_paths(&self, paths: &[PathBuf], workers: usize) -> Result<Vec<Vec<f32>>> {
        const BATCH: usize = 16;
        let chunks: Vec<&[PathBuf]> = paths.chunks(BATCH).collect();
        let results = par_map(&chunks, workers, |chunk| -> Result<Vec<Vec<f32>>> {
            let images = chunk.iter().map(load_image).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GrayImage> = images.iter().collect();
            self.features(&refs)
        });
        let mut out = Vec::with_capacity(paths.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Encodes every image of `pairs` once and indexes the pairs into the table.
    pub fn feature_pairs(&self, pairs: &PairSet, workers: usize) -> Result<FeaturePairs> {
        let names = pairs.images();
        let paths: Vec<PathBuf> = names.iter().map(|n| pairs.path(n)).collect();
        let features = self.features_for_paths(&paths, workers)?;
        let index: std::collections::HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        Ok(FeaturePairs {
            features,
            pairs: pairs.pairs.iter().map(|p| (index[p.a.as_str()], index[p.b.as_str()])).collect(),
            labels: pairs.pairs.iter().map(|p| f64::from(p.label)).collect(),
        })
    }
}

pub const PROJECTION_FILE: &str = "projection.ckpt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";

/// Checkpoints and bookkeeping from a probe run.
#[derive(Clone, Debug)]
pub struct ProbeArtifacts {
    pub projection: Checkpoint,
    pub classifier: Checkpoint,
    pub history: Vec<EpochSummary>,
    pub encoder_digest: String,
}

/// Trains the verification head on a frozen encoder and writes
/// `projection.ckpt` and `classifier.ckpt` into `out_dir`.
pub fn train_verifier(
    encoder: &FrozenEncoder,
    train: &PairSet,
    val: Option<&PairSet>,
    cfg: &ProbeConfig,
    out_dir: &Path,
    config_digest: &str,
    workers: usize,
) -> Result<ProbeArtifacts> {
    let before = encoder.digest();
    let train_f = encoder.feature_pairs(train, workers)?;
    let val_f = val.map(|v| encoder.feature_pairs(v, workers)).transpose()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = TrainLog::to_file(out_dir.join(crate::pretrain::LOG_FILE))?;
    let (verifier, history) = fit_verifier(cfg, &train_f, val_f.as_ref(), &mut log)?;
    let after = encoder.digest();
    if before != after {
        return Err(Error::Contract("encoder parameters changed during probing".into()));
    }
    let provenance = Provenance {
        config_digest: config_digest.to_string(),
        step: history.len() as u64,
        seed: cfg.seed,
        method: encoder.provenance.method.clone(),
    };
    let (projection, classifier) = verifier.checkpoints(&provenance)?;
    save_checkpoint(&projection, out_dir.join(PROJECTION_FILE))?;
    save_checkpoint(&classifier, out_dir.join(CLASSIFIER_FILE))?;
    Ok(ProbeArtifacts {
        projection,
        classifier,
        history,
        encoder_digest: after,
    })
}

/// `projection(encoder(img))`.
pub fn embed(encoder: &Checkpoint, projection: &Checkpoint, img: &GrayImage) -> Result<Embedding> {
    let enc = FrozenEncoder::from_checkpoint(encoder)?;
    projection.expect_component(Component::Projection)?;
    let head: Mlp = projection.architecture_as()?;
    let feats = enc.features(&[img])?;
    let mut tape = Tape::new(&projection.params);
    let x = tape.input(Tensor::matrix(1, feats[0].len(), feats[0].clone()));
    let z = head.forward(&mut tape, x)?;
    Embedding::new(tape.value(z).data.clone())
}
