use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::sqrt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Defaults for shape and attribute fitting.
    pub const SHAPE: AdamConfig = AdamConfig {
        lr: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    /// Defaults for pose and translation fitting.
    pub const POSE: AdamConfig = AdamConfig {
        lr: 0.05,
        ..AdamConfig::SHAPE
    };

    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid("adam needs lr > 0, betas in [0, 1) and eps > 0"))
        }
    }
}

/// Bias-corrected ADAM over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    /// One descent step, in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(invalid(
                "adam state, parameters and gradient differ in length",
            ));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (sqrt(v_hat) + eps);
        }
        Ok(())
    }
}
