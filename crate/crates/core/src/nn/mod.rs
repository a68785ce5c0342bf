//! One-dimensional convolutional regressor trained from scratch.

pub mod arch;
pub mod loss;
pub mod network;
pub mod optim;
pub mod real;
pub mod weights;

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub use arch::{ArchSpec, ConvSpec, FcSpec, OUTPUT_DIM};
pub use loss::{gaussian_nll_loss, LossGrad, LOG_VAR_MAX, LOG_VAR_MIN};
pub use network::ForwardCache;
pub use optim::{adamw_step, lr_schedule, TrainConfig};
pub use real::Real;
pub use weights::{ModelWeights, Moments};

use crate::error::{Error, Result};
use crate::synth::TargetVector;

/// Network output: five means and their log-variances (clamped to
/// `[LOG_VAR_MIN, LOG_VAR_MAX]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: TargetVector,
    pub log_var: [f64; 5],
}

impl Prediction {
    pub fn from_head<T: Real>(head: &[T]) -> Result<Self> {
        if head.len() != OUTPUT_DIM {
            return Err(Error::LengthMismatch { expected: OUTPUT_DIM, got: head.len() });
        }
        let mut mean = [0.0; 5];
        let mut log_var = [0.0; 5];
        for j in 0..5 {
            mean[j] = head[j].f64();
            log_var[j] = head[5 + j].f64().clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        }
        Ok(Self { mean: TargetVector::from_array(mean), log_var })
    }

    /// Predicted standard deviations `exp(lv / 2)`.
    pub fn sigma(&self) -> [f64; 5] {
        self.log_var.map(|lv| (0.5 * lv).exp())
    }
}
