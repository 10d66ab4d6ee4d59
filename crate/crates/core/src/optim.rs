//! AdamW with decoupled weight decay, warmup + cosine learning-rate schedule,
//! and global-norm gradient clipping.
//!
//! Update for every parameter element (`t` counts steps from 1):
//!
//! ```text
//! m  = b1 m + (1 - b1) g
//! v  = b2 v + (1 - b2) g^2
//! m^ = m / (1 - b1^t),  v^ = v / (1 - b2^t)
//! theta -= lr (m^ / (sqrt(v^) + eps) + weight_decay theta)
//! ```
//!
//! Weight decay applies to every tensor, biases included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn_core::{ParameterSet, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(format!(
                "betas must be in [0, 1), got {} / {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "max_grad_norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment buffers aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step_count: u64,
}

impl<F: Real> AdamWState<F> {
    pub fn new(params: &ParameterSet<F>) -> Self {
        let zeros = || params.iter().map(|t| vec![F::zero(); t.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step_count: 0,
        }
    }

    pub fn is_aligned(&self, params: &ParameterSet<F>) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(t, (m, v))| m.len() == t.len() && v.len() == t.len())
    }
}

/// One AdamW update using the gradients stored in `params`.
pub fn adamw_step<F: Real>(
    params: &mut ParameterSet<F>,
    state: &mut AdamWState<F>,
    hyper: &OptimHyper,
    lr: f64,
) -> Result<()> {
    if !state.is_aligned(params) {
        return Err(Error::shape(
            "adamw_step",
            "optimizer state does not match the parameter layout",
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    let f = F::from_f64_lossy;
    let (b1, b2) = (f(hyper.beta1), f(hyper.beta2));
    let (one_b1, one_b2) = (f(1.0 - hyper.beta1), f(1.0 - hyper.beta2));
    let (inv_bc1, inv_bc2) = (f(1.0 / bc1), f(1.0 / bc2));
    let (lr_f, eps, wd) = (f(lr), f(hyper.eps), f(hyper.weight_decay));

    for (i, tensor) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..tensor.values.len() {
            let g = tensor.grad[j];
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            let m_hat = m[j] * inv_bc1;
            let v_hat = v[j] * inv_bc2;
            let theta = tensor.values[j];
            let next = theta - lr_f * (m_hat / (v_hat.sqrt() + eps) + wd * theta);
            if !next.is_finite() {
                return Err(Error::NonFinite(format!(
                    "AdamW update of {}[{j}] at step {}",
                    tensor.name, state.step_count
                )));
            }
            tensor.values[j] = next;
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_global_norm<F: Real>(params: &mut ParameterSet<F>, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let mut sq = 0.0f64;
    for t in params.iter() {
        for &g in &t.grad {
            let g = g.to_f64_lossy();
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    let ff = F::from_f64_lossy(factor);
    for t in params.iter_mut() {
        t.grad.iter_mut().for_each(|g| *g = *g * ff);
    }
    Ok(factor)
}

/// Global L2 norm of all gradient buffers.
pub fn global_grad_norm<F: Real>(params: &ParameterSet<F>) -> f64 {
    params
        .iter()
        .flat_map(|t| t.grad.iter())
        .map(|g| {
            let g = g.to_f64_lossy();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Schedule settings that do not depend on the dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_epochs: 2,
            min_lr: 0.0,
        }
    }
}

impl ScheduleSpec {
    pub fn resolve(&self, total_epochs: usize, steps_per_epoch: usize) -> Result<ScheduleConfig> {
        let sched = ScheduleConfig {
            peak_lr: self.peak_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs,
            steps_per_epoch,
            min_lr: self.min_lr,
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Linear warmup followed by cosine annealing, resolved per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub min_lr: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "warmup_epochs ({}) must be < total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "steps_per_epoch must be >= 1".into(),
            ));
        }
        if !(self.peak_lr >= self.min_lr && self.min_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need peak_lr >= min_lr >= 0, got {} / {}",
                self.peak_lr, self.min_lr
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_epochs * self.steps_per_epoch) as u64
    }

    pub fn total_steps(&self) -> u64 {
        (self.total_epochs * self.steps_per_epoch) as u64
    }

    /// Learning rate for the 0-based optimizer step. Warmup ramps to
    /// `peak_lr` at its last step; steps past the end return `min_lr`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            return self.peak_lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (self.total_steps() - warmup) as f64;
        let t = ((step - warmup) as f64 / span).min(1.0);
        self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Free-function form of [`ScheduleConfig::lr_at`].
pub fn lr_at(step: u64, sched: &ScheduleConfig) -> f64 {
    sched.lr_at(step)
}
