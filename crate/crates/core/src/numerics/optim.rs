//! Momentum SGD on flattened parameter vectors.

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; store.numel()],
        }
    }

    /// `v ← μv + g; θ ← θ − lr·v`.
    pub fn step(&mut self, store: &mut ParamStore, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.velocity.len() {
            return Err(Error::Argument(format!(
                "{} gradient entries for {} parameters",
                grad.len(),
                self.velocity.len()
            )));
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let mut flat = store.flatten();
        for ((p, v), g) in flat.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        store.unflatten(&flat);
        Ok(())
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Half-cosine decay from `base` at step 0 to 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}
