use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Cosine decay from the base rate to `min_factor * base` over `total_steps`.
    Cosine { total_steps: u64, min_factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
        }
    }
}

impl AdamWConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine {
                total_steps,
                min_factor,
            } => {
                let t = (step as f64 / total_steps.max(1) as f64).min(1.0);
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.lr * (min_factor + (1.0 - min_factor) * cos)
            }
        }
    }
}

/// Moments and step counter, aligned with one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
    /// Updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        AdamW {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            skipped: 0,
        }
    }

    /// One decoupled-weight-decay Adam update. Returns `false` (and leaves
    /// everything untouched) when the gradient is not finite.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<bool> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                found: grads.len(),
            });
        }
        if !grads.is_finite() {
            self.skipped += 1;
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step);
            return Ok(false);
        }
        let c = &self.config;
        let lr = c.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * c.weight_decay;
        let data = params.data_mut();
        for i in 0..data.len() {
            let g = grads.data[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            data[i] = data[i] * decay - lr * mhat / (vhat.sqrt() + c.eps);
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Activation, Manifest};
    use crate::rng::seeded;

    fn params() -> ParameterSet {
        let mut m = Manifest::new();
        m.dense("a", 3, 2, Activation::None);
        ParameterSet::init(m, &mut seeded(5))
    }

    #[test]
    fn zero_gradient_applies_only_decay() {
        let mut p = params();
        let before = p.data().to_vec();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.01,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            p.len(),
        );
        let zero = Gradients::zeros(p.len());
        opt.step(&mut p, &zero).unwrap();
        for (a, b) in p.data().iter().zip(&before) {
            assert!((a - b * (1.0 - 0.001)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = params();
        let before = p.data().to_vec();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.0,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            p.len(),
        );
        let g = Gradients {
            data: vec![0.3; p.len()],
        };
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = params();
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), p.len());
        let mut g = Gradients::zeros(p.len());
        g.data[2] = f64::NAN;
        assert!(!opt.step(&mut p, &g).unwrap());
        assert_eq!(p, before);
        assert_eq!((opt.step, opt.skipped), (0, 1));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = AdamWConfig {
            lr: 2e-5,
            schedule: Schedule::Cosine {
                total_steps: 100,
                min_factor: 0.0,
            },
            ..AdamWConfig::default()
        };
        assert_eq!(c.lr_at(0), 2e-5);
        assert!((c.lr_at(50) - 1e-5).abs() < 1e-18);
        assert!(c.lr_at(100).abs() < 1e-20);
    }
}
