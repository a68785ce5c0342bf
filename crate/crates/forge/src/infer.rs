//! Batched inference and batched fitting.

use rayon::prelude::*;

use odmr_core::fitter::{hybrid_fit_from_prediction, lm_fit, mc_fit, FitConfig, FitModelParams, FitResult};
use odmr_core::nn::{ModelWeights, Prediction};
use odmr_core::spectrum::Spectrum;
use odmr_core::synth::PriorConfig;
use odmr_core::Error;

use crate::error::Result;

/// Spectra per forward pass; large enough to amortize GEMM overhead.
pub const INFER_CHUNK: usize = 64;

/// Predictions for `inputs.len() / input_length` Z-scored spectra laid end to
/// end. Each chunk is independent, so results do not depend on the schedule.
pub fn infer_batch(w: &ModelWeights<f32>, inputs: &[f32]) -> Result<Vec<Prediction>> {
    let len = w.arch().input_length();
    if inputs.len() % len != 0 {
        return Err(Error::LengthMismatch { expected: len, got: inputs.len() % len }.into());
    }
    let chunks: Vec<Vec<Prediction>> = inputs
        .par_chunks(INFER_CHUNK * len)
        .map(|x| w.predict_batch(x, x.len() / len))
        .collect::<std::result::Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Z-scores each spectrum into one flat `f32` buffer.
pub fn normalize_inputs(spectra: &[Spectrum]) -> Result<Vec<f32>> {
    let parts: Vec<Vec<f32>> = spectra
        .par_iter()
        .map(|s| odmr_core::spectrum::zscore_normalize(s).map(|n| n.values.iter().map(|&v| v as f32).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(parts.concat())
}

/// How a batch of spectra is fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMethod {
    /// Best of `cfg.mc_restarts` prior-sampled starts; spectrum `i` uses
    /// seed `seed + i`.
    Mc { seed: u64 },
    /// One LM run from a fixed start.
    Fixed(FitModelParams),
}

pub fn fit_batch(spectra: &[Spectrum], method: FitMethod, cfg: &FitConfig, prior: &PriorConfig) -> Vec<Result<FitResult>> {
    spectra
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let s = s.mean_normalized()?;
            Ok(match method {
                FitMethod::Mc { seed } => mc_fit(&s, seed.wrapping_add(i as u64), cfg, prior)?,
                FitMethod::Fixed(init) => lm_fit(&s, &init, cfg)?,
            })
        })
        .collect()
}

/// Network prediction followed by one LM refinement per spectrum.
pub fn hybrid_batch(w: &ModelWeights<f32>, spectra: &[Spectrum], cfg: &FitConfig) -> Result<Vec<Result<FitResult>>> {
    let preds = infer_batch(w, &normalize_inputs(spectra)?)?;
    Ok(spectra
        .par_iter()
        .zip(preds.par_iter())
        .map(|(s, p)| Ok(hybrid_fit_from_prediction(p, &s.mean_normalized()?, cfg)?))
        .collect())
}
