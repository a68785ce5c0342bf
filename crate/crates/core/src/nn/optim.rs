//! AdamW with decoupled weight decay and the warmup + cosine learning-rate schedule.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::real::Real;
use super::weights::{ModelWeights, Moments};
use crate::error::{domain, Result};

/// Reference batch size of the linear learning-rate scaling rule.
pub const REFERENCE_BATCH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Training length in samples seen (data is generated on the fly, so there are no epochs).
    pub total_samples: u64,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_frac: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
    /// Samples per gradient work item; fixes the reduction topology.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            total_samples: 20_000_000,
            eta_max: 1.5e-3,
            eta_min: 1e-5,
            warmup_frac: 0.05,
            betas: (0.9, 0.95),
            weight_decay: 1e-2,
            eps: 1e-8,
            seed: 0,
            micro_batch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validated(self) -> Result<Self> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(domain!("warmup fraction must lie in (0, 1), got {}", self.warmup_frac));
        }
        if !(self.eta_min < self.eta_max) || !(self.eta_min >= 0.0) {
            return Err(domain!("need 0 <= eta_min < eta_max, got {} and {}", self.eta_min, self.eta_max));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(domain!("batch sizes must be positive"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(domain!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        Ok(self)
    }

    /// Number of optimizer steps needed to see `total_samples`.
    pub fn total_steps(&self) -> u64 {
        self.total_samples.div_ceil(self.batch_size as u64)
    }

    /// Linear scaling rule `eta_max = 0.0015 * B / 2048`.
    pub fn with_linear_lr_scaling(mut self) -> Self {
        self.eta_max = 1.5e-3 * self.batch_size as f64 / REFERENCE_BATCH as f64;
        self
    }

    /// Number of warmup steps out of `total_steps`.
    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        let w = (self.warmup_frac * total_steps as f64).round() as u64;
        w.min(total_steps.saturating_sub(1))
    }
}

/// Learning rate at `step` (0-based) of a `total_steps` run.
///
/// Warmup rises linearly from `0.1 * eta_max` to `eta_max`; afterwards the
/// rate follows a half cosine that reaches `eta_min` on the last step.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if step >= total_steps {
        return Err(domain!("step {step} outside schedule of {total_steps} steps"));
    }
    let warm = cfg.warmup_steps(total_steps);
    if step == 0 {
        // a correctly rounded tenth, one rounding instead of two
        return Ok(cfg.eta_max / 10.0);
    }
    if step < warm {
        return Ok(cfg.eta_max * (0.1 + 0.9 * step as f64 / warm as f64));
    }
    let span = total_steps - 1 - warm;
    if step == warm {
        return Ok(cfg.eta_max);
    }
    if step == total_steps - 1 {
        return Ok(cfg.eta_min);
    }
    let progress = (step - warm) as f64 / span as f64;
    Ok(cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + (core::f64::consts::PI * progress).cos()))
}

/// One AdamW update: decoupled decay `θ <- θ - η λ θ`, then the bias-corrected
/// adaptive step `θ <- θ - η m̂ / (sqrt(v̂) + ε)`.
pub fn adamw_step<T: Real>(weights: &mut ModelWeights<T>, grads: &[T], cfg: &TrainConfig, eta: f64) -> Result<()> {
    if grads.len() != weights.len() {
        return Err(crate::Error::LengthMismatch { expected: weights.len(), got: grads.len() });
    }
    let n = weights.len();
    let moments = weights.moments.get_or_insert_with(|| Moments::zeros(n));
    weights.step += 1;
    let t = weights.step as i32;
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = T::of(1.0 - eta * cfg.weight_decay);
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let step_size = T::of(eta / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in weights.params.iter_mut().zip(grads).zip(&mut moments.first).zip(&mut moments.second) {
        *p = *p * decay;
        *m = tb1 * *m + ob1 * g;
        *v = tb2 * *v + ob2 * g * g;
        *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(())
}
