#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::Prediction;
use crate::error::{domain, Result};
use crate::synth::TargetVector;

pub const LOG_VAR_MIN: f64 = -14.0;
pub const LOG_VAR_MAX: f64 = 4.0;

/// Gradient of the loss with respect to the predicted means and log-variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad {
    pub mean: [f64; 5],
    pub log_var: [f64; 5],
}

/// Heteroscedastic Gaussian negative log-likelihood, averaged over the five
/// outputs (constant `log 2π` term dropped):
/// `(1/5) Σ_j [ exp(-lv_j) (μ_j - t_j)² / 2 + lv_j / 2 ]`.
pub fn gaussian_nll_loss(pred: &Prediction, target: &TargetVector) -> Result<(f64, LossGrad)> {
    let mu = pred.mean.to_array();
    let t = target.to_array();
    let mut loss = 0.0;
    let mut grad = LossGrad { mean: [0.0; 5], log_var: [0.0; 5] };
    for j in 0..5 {
        let lv = pred.log_var[j];
        if !mu[j].is_finite() || !lv.is_finite() || !t[j].is_finite() {
            return Err(domain!("non-finite loss input at output {j}: mean {}, log-var {lv}, target {}", mu[j], t[j]));
        }
        let precision = (-lv).exp();
        let r = mu[j] - t[j];
        loss += 0.5 * precision * r * r + 0.5 * lv;
        grad.mean[j] = precision * r / 5.0;
        grad.log_var[j] = (0.5 - 0.5 * precision * r * r) / 5.0;
    }
    Ok((loss / 5.0, grad))
}
