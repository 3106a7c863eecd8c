use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::AugmentPolicy;

/// Stage-one training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Enhance,
    Simclr,
    Moco,
    Byol,
    Simsiam,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Enhance, Method::Simclr, Method::Moco, Method::Byol, Method::Simsiam];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Enhance => "enhance",
            Method::Simclr => "simclr",
            Method::Moco => "moco",
            Method::Byol => "byol",
            Method::Simsiam => "simsiam",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Method::Enhance => 1e-3,
            _ => 3e-4,
        }
    }

    /// EMA momentum of the target network, for the methods that keep one.
    pub fn default_momentum(self) -> Option<f64> {
        match self {
            Method::Moco => Some(0.99),
            Method::Byol => Some(0.996),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected enhance, simclr, moco, byol or simsiam")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// `None` selects the method default (1e-3 enhance, 3e-4 otherwise).
    pub learning_rate: Option<f64>,
    pub temperature: f64,
    pub queue_size: usize,
    /// `None` selects the method default (0.99 moco, 0.996 byol).
    pub momentum: Option<f64>,
    /// Width of the self-supervised projector and predictor.
    pub head_width: usize,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            method: Method::Enhance,
            epochs: 50,
            early_stop_patience: 5,
            batch_size: 8,
            learning_rate: None,
            temperature: 0.2,
            queue_size: 1024,
            momentum: None,
            head_width: 512,
            augment: AugmentPolicy::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.method.default_learning_rate())
    }

    pub fn momentum(&self) -> f64 {
        self.momentum.or(self.method.default_momentum()).unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.head_width == 0 {
            return Err(Error::Config("epochs, batch_size and head_width must be positive".into()));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {lr}")));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        let m = self.momentum();
        if !(0.0..1.0).contains(&m) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {m}")));
        }
        if self.method == Method::Moco && self.queue_size < self.batch_size {
            return Err(Error::Config(format!(
                "queue_size {} is smaller than batch_size {}",
                self.queue_size, self.batch_size
            )));
        }
        if self.method == Method::Simclr && self.batch_size < 2 {
            return Err(Error::Config("simclr needs batch_size >= 2".into()));
        }
        Ok(())
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStopper {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Returns `true` when `loss` is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.stale >= self.patience
    }
}

/// Per-epoch bookkeeping returned by the training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

/// Batches of `batch` indices; a trailing singleton joins the previous batch
/// so every batch can form pairs.
pub(crate) fn batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("resnet".parse::<Method>().is_err());
    }

    #[test]
    fn validation_rules() {
        let moco = PretrainConfig {
            method: Method::Moco,
            queue_size: 4,
            ..Default::default()
        };
        assert!(moco.validate().is_err());
        assert!(PretrainConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { momentum: Some(1.0), ..Default::default() }.validate().is_err());
        assert_eq!(PretrainConfig { method: Method::Byol, ..Default::default() }.momentum(), 0.996);
    }

    #[test]
    fn early_stopping_and_batches() {
        let mut s = EarlyStopper::new(2);
        assert!(s.observe(0, 1.0));
        assert!(!s.observe(1, 1.5));
        assert!(!s.should_stop());
        assert!(!s.observe(2, 1.0));
        assert!(s.should_stop());
        assert_eq!(batches(&[0, 1, 2, 3, 4], 2), vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(batches(&[0], 4), vec![vec![0]]);
    }
}
