//! SGD with momentum and coupled weight decay, and the warmup + cosine
//! learning-rate schedule with linear batch-size scaling.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Reference batch size of the linear scaling rule.
pub const REFERENCE_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, batch_size: usize, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        let s = Self { base_lr, batch_size, warmup_steps, total_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base learning rate must be positive, got {}", self.base_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup ({} steps) must be shorter than the schedule ({} steps)",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// `(B / 256) · base_lr`.
    pub fn initial_lr(&self) -> f64 {
        self.batch_size as f64 / REFERENCE_BATCH as f64 * self.base_lr
    }

    /// Linear warmup from 0 over `warmup_steps`, then a single cosine decay
    /// to 0 at `total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Range(format!("step {step} beyond schedule end {}", self.total_steps)));
        }
        let peak = self.initial_lr();
        if step < self.warmup_steps {
            return Ok(peak * step as f64 / self.warmup_steps as f64);
        }
        let t = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(peak * 0.5 * (1.0 + (PI * t).cos()))
    }
}

/// Momentum buffers for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &[Tensor<T>], momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: params.iter().map(Tensor::zeros_like).collect() }
    }

    /// `g' = g + wd·p; v ← μ·v + g'; p ← p − lr·v`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        assert_eq!(params.len(), self.velocity.len(), "optimizer state does not match parameters");
        for (g, p) in grads.iter().zip(params.iter()) {
            assert_eq!(p.shape, g.shape, "gradient shape mismatch for {}", p.name);
            if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in {} at flat index {i} ({:?})",
                    g.name, g.data[i]
                )));
            }
        }
        let (mu, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            assert_eq!(p.shape, v.shape, "velocity shape mismatch for {}", p.name);
            for ((pi, &gi), vi) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vi = mu * *vi + (gi + wd * *pi);
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
