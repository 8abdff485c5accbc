//! Nesterov-momentum SGD with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamGrad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    /// Linear ramp of the learning rate over the first updates.
    pub warmup_steps: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            clip_norm: 5.0,
            epochs: 20,
            batch_size: 8,
            lr_decay: 1.0,
            warmup_steps: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr_decay must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    /// Learning rate for update number `step` (0-based) taken during `epoch`.
    pub fn step_learning_rate(&self, epoch: usize, step: u64) -> f64 {
        let lr = self.learning_rate_at(epoch);
        if step < self.warmup_steps {
            lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            lr
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NesterovState {
    pub velocity: Vec<f64>,
    pub step_count: u64,
}

impl NesterovState {
    pub fn new(num_params: usize) -> Self {
        Self {
            velocity: vec![0.0; num_params],
            step_count: 0,
        }
    }
}

/// One Nesterov step using the gradient at the current parameters:
///
/// ```text
/// v     <- mu * v - lr * g
/// theta <- theta + mu * v - lr * g
/// ```
///
/// A non-finite gradient leaves both parameters and state untouched.
pub fn nesterov_step<'a, I>(params: I, grads: &ParamGrad, state: &mut NesterovState, lr: f64, momentum: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut [f64]>,
{
    if grads.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries, optimizer state {}",
            grads.len(),
            state.velocity.len()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let g = grads.as_slice();
    let mut off = 0;
    for slice in params {
        let end = off + slice.len();
        if end > g.len() {
            return Err(Error::ShapeMismatch("parameters longer than gradient".into()));
        }
        for ((p, &gi), v) in slice.iter_mut().zip(&g[off..end]).zip(&mut state.velocity[off..end]) {
            *v = momentum * *v - lr * gi;
            *p += momentum * *v - lr * gi;
        }
        off = end;
    }
    if off != g.len() {
        return Err(Error::ShapeMismatch("parameters shorter than gradient".into()));
    }
    state.step_count += 1;
    Ok(())
}

/// Rescales `grads` so the global L2 norm is at most `clip_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut ParamGrad, clip_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}
