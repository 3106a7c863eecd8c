use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::config::{batches, EarlyStopper, EpochSummary, Method, PretrainConfig};
use super::enhance::{split_checkpoints, FitOutcome, PretrainArtifacts, ENCODER_FILE, LOG_FILE, SSL_HEAD_FILE};
use super::log::TrainLog;
use super::losses::{loss_byol, loss_infonce_queue, loss_ntxent, loss_simsiam, view_pairs};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::model::{
    encoder_on_tape, images_to_tensor, init_unet, save_checkpoint, Adam, AdamConfig, Component, Mlp, ParamGrads,
    ParamSet, Scalar, Tape, Tensor, UNetConfig, Var,
};
use crate::parallel::par_map;
use crate::seed::{derive_seed, rng_from};
use crate::synthdata::{augment_view, load_split, Manifest, Split};

/// Fixed-capacity FIFO of unit-length keys used as MoCo negatives.
#[derive(Clone, Debug)]
pub struct KeyQueue {
    dim: usize,
    capacity: usize,
    keys: VecDeque<Vec<f32>>,
}

impl KeyQueue {
    /// A full queue of random unit vectors.
    pub fn random(capacity: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, "moco-queue", &[]));
        let keys = (0..capacity)
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                unit(&v)
            })
            .collect();
        KeyQueue { dim, capacity, keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn flat<T: Scalar>(&self) -> Vec<T> {
        self.keys.iter().flatten().map(|&v| T::from_f64(v as f64)).collect()
    }

    /// Enqueues a batch of keys (normalized on entry) and drops the oldest
    /// entries so the length stays at capacity.
    pub fn push(&mut self, keys: &[f32]) {
        for row in keys.chunks(self.dim) {
            self.keys.push_back(unit(row));
        }
        while self.keys.len() > self.capacity {
            self.keys.pop_front();
        }
    }

    /// The newest key.
    pub fn newest(&self) -> Option<&[f32]> {
        self.keys.back().map(Vec::as_slice)
    }
}

fn unit(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
    v.iter().map(|x| x / norm).collect()
}

/// `target <- m * target + (1 - m) * online` for every block of `target`.
pub fn ema_update<T: Scalar>(target: &mut ParamSet<T>, online: &ParamSet<T>, momentum: f64) -> Result<()> {
    let m = T::from_f64(momentum);
    let rest = T::from_f64(1.0 - momentum);
    for p in target.iter_mut() {
        let src = online
            .get(&p.name)
            .ok_or_else(|| Error::Contract(format!("online network lacks {}", p.name)))?;
        for (t, &o) in p.data.iter_mut().zip(&src.data) {
            *t = m * *t + rest * o;
        }
    }
    Ok(())
}

/// Encoder plus method-specific heads.
#[derive(Clone, Debug)]
pub struct SslNets {
    pub method: Method,
    pub unet: UNetConfig,
    pub projector: Mlp,
    pub predictor: Option<Mlp>,
    pub temperature: f64,
}

/// Loss, gradients and projections from one batch.
#[derive(Clone, Debug)]
pub struct SslStep<T> {
    pub loss: f64,
    /// Aligned with the online parameter set; `None` when not requested.
    pub grads: Option<ParamGrads<T>>,
    /// Online projections of every view, row-major.
    pub projections: Vec<T>,
    /// Target-network keys to enqueue (MoCo only).
    pub keys: Vec<T>,
}

fn stack<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut shape = a.shape;
    shape[0] += b.shape[0];
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Tensor::from_vec(shape, data)
}

impl SslNets {
    pub fn new(method: Method, unet: &UNetConfig, head_width: usize, temperature: f64) -> Result<Self> {
        if method == Method::Enhance {
            return Err(Error::Config("enhance is not a self-supervised method".into()));
        }
        let predictor = matches!(method, Method::Byol | Method::Simsiam).then(|| Mlp::ssl_predictor(head_width));
        Ok(SslNets {
            method,
            unet: unet.clone(),
            projector: Mlp::ssl_projector(unet.bottleneck_dim, head_width),
            predictor,
            temperature,
        })
    }

    /// Online network: the U-Net encoder (same initialization as the
    /// enhancement run for a given seed) plus fresh heads.
    pub fn init_online<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut set = init_unet::<T>(&self.unet, seed)?.subset("encoder.");
        self.projector.init_into(&mut set, seed)?;
        if let Some(pred) = &self.predictor {
            pred.init_into(&mut set, seed)?;
        }
        Ok(set)
    }

    /// Target network copy for the methods that keep one.
    pub fn init_target<T: Scalar>(&self, online: &ParamSet<T>) -> Option<ParamSet<T>> {
        matches!(self.method, Method::Moco | Method::Byol).then(|| {
            let mut t = online.subset("encoder.");
            t.extend(online.subset("projector.")).expect("disjoint prefixes");
            t
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Tensor<T>, predict: bool) -> Result<(Var, Option<Var>)> {
        let xv = tape.input(x);
        let (feat, _) = encoder_on_tape(tape, &self.unet, xv)?;
        let z = self.projector.forward(tape, feat)?;
        let p = match (&self.predictor, predict) {
            (Some(pred), true) => Some(pred.forward(tape, z)?),
            _ => None,
        };
        Ok((z, p))
    }

    /// Evaluates the method's objective on two views of the same images.
    pub fn objective<T: Scalar>(
        &self,
        online: &ParamSet<T>,
        target: Option<&ParamSet<T>>,
        queue: Option<&[T]>,
        v1: &Tensor<T>,
        v2: &Tensor<T>,
        need_grads: bool,
    ) -> Result<SslStep<T>> {
        let n = v1.batch();
        let w = self.projector.output_dim();
        let mut tape = Tape::new(online);
        let missing_target = || Error::Contract(format!("{} needs a target network", self.method));
        let (loss, seeds, keys, projections) = match self.method {
            Method::Simclr => {
                let (z, _) = self.forward(&mut tape, stack(v1, v2), false)?;
                let zs = tape.value(z).data.clone();
                let lg = loss_ntxent(&zs, w, &view_pairs(n), self.temperature)?;
                (lg.loss, vec![(z, lg.grad)], Vec::new(), zs)
            }
            Method::Moco => {
                let target = target.ok_or_else(missing_target)?;
                let queue = queue.ok_or_else(|| Error::Contract("moco needs a key queue".into()))?;
                let (q, _) = self.forward(&mut tape, v1.clone(), false)?;
                let keys = {
                    let mut tt = Tape::new(target);
                    let (k, _) = self.forward(&mut tt, v2.clone(), false)?;
                    tt.value(k).data.clone()
                };
                let qs = tape.value(q).data.clone();
                let lg = loss_infonce_queue(&qs, &keys, queue, w, self.temperature)?;
                (lg.loss, vec![(q, lg.grad)], keys, qs)
            }
            Method::Byol | Method::Simsiam => {
                let (z, p) = self.forward(&mut tape, stack(v1, v2), true)?;
                let p = p.expect("predictor present");
                let zs = tape.value(z).data.clone();
                let ps = tape.value(p).data.clone();
                let half = n * w;
                let targets = if self.method == Method::Byol {
                    let target = target.ok_or_else(missing_target)?;
                    let mut tt = Tape::new(target);
                    let (tz, _) = self.forward(&mut tt, stack(v1, v2), false)?;
                    tt.value(tz).data.clone()
                } else {
                    zs.clone()
                };
                let (p1, p2) = ps.split_at(half);
                let (z1, z2) = targets.split_at(half);
                let g = if self.method == Method::Byol {
                    loss_byol(p1, p2, z1, z2, w)?
                } else {
                    loss_simsiam(p1, p2, z1, z2, w)?
                };
                let mut gp = g.grad_p1;
                gp.extend(g.grad_p2);
                let mut seeds = vec![(p, gp)];
                if self.method == Method::Simsiam {
                    // The projections act as constants in the objective; their
                    // seed is the all-zero gradient from the loss.
                    let mut gz = g.grad_z1;
                    gz.extend(g.grad_z2);
                    seeds.push((z, gz));
                }
                (g.loss, seeds, Vec::new(), zs)
            }
            Method::Enhance => unreachable!("rejected in SslNets::new"),
        };
        let grads = need_grads.then(|| {
            let seeds: Vec<(Var, Tensor<T>)> = seeds
                .into_iter()
                .map(|(v, g)| {
                    let shape = tape.value(v).shape;
                    (v, Tensor::from_vec(shape, g))
                })
                .collect();
            tape.backward(&seeds).into_params()
        });
        Ok(SslStep {
            loss,
            grads,
            projections,
            keys,
        })
    }
}

/// Mean over dimensions of the per-dimension standard deviation of
/// length-normalized rows.
pub fn projection_std(rows: &[f32], dim: usize) -> f64 {
    let n = rows.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let units: Vec<f32> = rows.chunks(dim).flat_map(unit).collect();
    let mut total = 0.0;
    for d in 0..dim {
        let col = units.iter().skip(d).step_by(dim).map(|&v| v as f64);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / dim as f64
}

/// Online/target networks, optimizer and queue for one self-supervised run.
pub struct SslTrainer {
    pub nets: SslNets,
    online: ParamSet<f32>,
    target: Option<ParamSet<f32>>,
    queue: Option<KeyQueue>,
    opt: Adam,
    momentum: f64,
    steps: u64,
}

impl SslTrainer {
    pub fn new(cfg: &PretrainConfig, unet: &UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let nets = SslNets::new(cfg.method, unet, cfg.head_width, cfg.temperature)?;
        let online = nets.init_online(cfg.seed)?;
        let target = nets.init_target(&online);
        let queue = (cfg.method == Method::Moco).then(|| KeyQueue::random(cfg.queue_size, cfg.head_width, cfg.seed));
        let opt = Adam::new(
            AdamConfig {
                learning_rate: cfg.learning_rate(),
                ..AdamConfig::default()
            },
            &online,
        );
        Ok(SslTrainer {
            nets,
            online,
            target,
            queue,
            opt,
            momentum: cfg.momentum(),
            steps: 0,
        })
    }

    pub fn online(&self) -> &ParamSet<f32> {
        &self.online
    }

    pub fn target(&self) -> Option<&ParamSet<f32>> {
        self.target.as_ref()
    }

    pub fn queue(&self) -> Option<&KeyQueue> {
        self.queue.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn views(&self, v1: &[GrayImage], v2: &[GrayImage]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let size = self.nets.unet.input_size;
        let r1: Vec<&GrayImage> = v1.iter().collect();
        let r2: Vec<&GrayImage> = v2.iter().collect();
        Ok((images_to_tensor(&r1, size)?, images_to_tensor(&r2, size)?))
    }

    /// One optimizer step on paired views; updates EMA target and queue.
    pub fn step(&mut self, v1: &[GrayImage], v2: &[GrayImage]) -> Result<SslStep<f32>> {
        let (a, b) = self.views(v1, v2)?;
        let queue = self.queue.as_ref().map(KeyQueue::flat::<f32>);
        let out = self
            .nets
            .objective(&self.online, self.target.as_ref(), queue.as_deref(), &a, &b, true)?;
        self.opt.step(&mut self.online, out.grads.as_ref().expect("requested"));
        if let Some(target) = &mut self.target {
            ema_update(target, &self.online, self.momentum)?;
        }
        if let Some(q) = &mut self.queue {
            q.push(&out.keys);
        }
        self.steps += 1;
        Ok(out)
    }

    /// Objective on paired views without any update.
    pub fn eval(&self, v1: &[GrayImage], v2: &[GrayImage]) -> Result<SslStep<f32>> {
        let (a, b) = self.views(v1, v2)?;
        let queue = self.queue.as_ref().map(KeyQueue::flat::<f32>);
        self.nets
            .objective(&self.online, self.target.as_ref(), queue.as_deref(), &a, &b, false)
    }
}

fn make_views(
    images: &[GrayImage],
    idx: &[usize],
    cfg: &PretrainConfig,
    stage: &str,
    epoch: u64,
    workers: usize,
) -> (Vec<GrayImage>, Vec<GrayImage>) {
    let jobs: Vec<(usize, u64)> = idx.iter().flat_map(|&i| [(i, 0u64), (i, 1u64)]).collect();
    let views = par_map(&jobs, workers, |&(i, view)| {
        augment_view(&images[i], &cfg.augment, derive_seed(cfg.seed, stage, &[epoch, i as u64, view]))
    });
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (k, v) in views.into_iter().enumerate() {
        if k % 2 == 0 {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    (a, b)
}

/// Trains a self-supervised method on unlabeled images with early stopping
/// on the validation objective (fixed validation views).
pub fn fit_ssl(
    cfg: &PretrainConfig,
    unet: &UNetConfig,
    train: &[GrayImage],
    val: &[GrayImage],
    workers: usize,
    log: &mut TrainLog,
) -> Result<FitOutcome> {
    let min = if cfg.method == Method::Simclr { 2 } else { 1 };
    if train.len() < min || val.len() < min {
        return Err(Error::Data(format!(
            "{} needs at least {min} train and val images",
            cfg.method
        )));
    }
    let mut trainer = SslTrainer::new(cfg, unet)?;
    let lr = cfg.learning_rate();
    let w = cfg.head_width;
    let val_order: Vec<usize> = (0..val.len()).collect();
    let val_batches = batches(&val_order, cfg.batch_size);
    let val_views: Vec<_> = val_batches
        .iter()
        .map(|b| make_views(val, b, cfg, "ssl-val-view", 0, workers))
        .collect();
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best = (trainer.online.clone(), 0u64);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, "pretrain-shuffle", &[epoch as u64])));
        let mut sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let (v1, v2) = make_views(train, &batch, cfg, "ssl-view", epoch as u64, workers);
            let out = trainer.step(&v1, &v2)?;
            log.record(trainer.steps, "train", out.loss, lr, None)?;
            sum += out.loss * batch.len() as f64;
        }
        let mut val_sum = 0.0;
        let mut projections = Vec::new();
        for (batch, (v1, v2)) in val_batches.iter().zip(&val_views) {
            let out = trainer.eval(v1, v2)?;
            val_sum += out.loss * batch.len() as f64;
            projections.extend(out.projections);
        }
        let val_loss = val_sum / val.len() as f64;
        log.record(trainer.steps, "val", val_loss, lr, Some(projection_std(&projections, w)))?;
        if stopper.observe(epoch, val_loss) {
            best = (trainer.online.clone(), trainer.steps);
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

/// Trains on the degraded images of the train/val splits and writes
/// `encoder.ckpt`, `ssl_head.ckpt` and the training log into `out_dir`.
pub fn train_ssl(
    cfg: &PretrainConfig,
    unet: &UNetConfig,
    manifest: &Manifest,
    out_dir: &Path,
    config_digest: &str,
    workers: usize,
) -> Result<PretrainArtifacts> {
    let degraded = |split| -> Result<Vec<GrayImage>> {
        Ok(load_split(manifest, split)?.into_iter().map(|(d, _)| d).collect())
    };
    let (train, val) = (degraded(Split::Train)?, degraded(Split::Val)?);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = TrainLog::to_file(out_dir.join(LOG_FILE))?;
    let outcome = fit_ssl(cfg, unet, &train, &val, workers, &mut log)?;
    let nets = SslNets::new(cfg.method, unet, cfg.head_width, cfg.temperature)?;
    let arch = serde_json::json!({ "projector": nets.projector, "predictor": nets.predictor });
    let (encoder, heads) =
        split_checkpoints(&outcome, unet, cfg.method, Component::SslHead, arch, cfg.seed, config_digest)?;
    save_checkpoint(&encoder, out_dir.join(ENCODER_FILE))?;
    save_checkpoint(&heads, out_dir.join(SSL_HEAD_FILE))?;
    Ok(PretrainArtifacts {
        encoder,
        heads,
        history: outcome.history,
    })
}
