//! Optimization: Adam with bias correction and a stepwise learning-rate
//! decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Learning rate `initial * factor^(epoch / every)` (integer division):
/// multiply by `factor` once every `every` epochs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: u32,
}

impl StepDecay {
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        self.initial * self.factor.powi((epoch / self.every) as i32)
    }
}

impl Default for StepDecay {
    /// 1e-3 decimated every 25 epochs.
    fn default() -> Self {
        StepDecay { initial: 1e-3, factor: 0.1, every: 25 }
    }
}

/// Adam over a fixed parameter list. Moment buffers are indexed by position,
/// so the parameter list must not change after construction. Updates are
/// elementwise and sequential: identical seeds and gradients give bitwise
/// identical parameters on every run.
pub struct Adam<E: Element> {
    params: Vec<Tensor<E>>,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-class loss weights carried alongside the optimizer so the
    /// training loop has a single source for them. Not used by `step`.
    pub class_weights: Option<Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(params: Vec<Tensor<E>>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            class_weights: None,
        }
    }

    pub fn with_class_weights(mut self, weights: Vec<E>) -> Self {
        self.class_weights = Some(weights);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One Adam update with bias correction:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
    /// Parameters without an accumulated gradient are left unchanged.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = E::of_f64(self.beta1);
        let b2 = E::of_f64(self.beta2);
        let one = E::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = E::of_f64(self.lr);
        let eps = E::of_f64(self.eps);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if let Some((j, bad)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} at index {j} of parameter {i}"
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut vals = p.values_vec();
            for (((mi, vi), gi), pi) in m.iter_mut().zip(v.iter_mut()).zip(&g).zip(&mut vals) {
                *mi = b1 * *mi + (one - b1) * *gi;
                *vi = b2 * *vi + (one - b2) * *gi * *gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
            p.set_values(&vals);
        }
        Ok(())
    }
}
