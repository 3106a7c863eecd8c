use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamSet};
use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Scalar>(&mut self, params: &mut ParamSet<T>, grads: &ParamGrads<T>) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.grads.iter().enumerate() {
            let p = params.entry_mut(i);
            for (((x, &gi), m), v) in p.data.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                let gi = gi.as_f64();
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *x = T::from_f64(x.as_f64() - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", vec![2], vec![1.0, -1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = ParamGrads {
            grads: vec![vec![0.5, -3.0]],
        };
        opt.step(&mut p, &g);
        let w = &p.get("w").unwrap().data;
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", vec![1], vec![3.0]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &p);
        for _ in 0..2000 {
            let x = p.get("w").unwrap().data[0];
            opt.step(&mut p, &ParamGrads { grads: vec![vec![2.0 * (x - 1.0)]] });
        }
        assert!((p.get("w").unwrap().data[0] - 1.0).abs() < 1e-3);
    }
}
