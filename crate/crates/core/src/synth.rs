//! Seeded synthetic spectra: prior sampling, Poisson shot noise and labels.
//!
//! One master seed defines an infinite, indexable stream. Item `i` is drawn
//! from [`rng::stream`]`(seed, SYNTH, i)`, so batches can be produced in any
//! order or in parallel without changing their content.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{domain, Result};
use crate::rng::{self, StreamRng};
use crate::spectrum::{double_lorentzian, snr_of, zscore_normalize, FrequencyGrid, LineshapeParams, NormalizedSpectrum, Spectrum};

/// Sampling ranges for synthetic line shapes (normalized frequency units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub width_range: [f64; 2],
    pub asym_sigma: f64,
    pub asym_max: f64,
    pub contrast_range: [f64; 2],
    pub center_range: [f64; 2],
    pub splitting_range: [f64; 2],
    /// Minimum splitting as a multiple of the mean width.
    pub splitting_floor_factor: f64,
    /// Total photons per spectrum, spread evenly over the grid points.
    pub photons_range: [f64; 2],
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            width_range: [0.02, 0.09],
            asym_sigma: 0.083,
            asym_max: 0.25,
            contrast_range: [0.012, 0.15],
            center_range: [0.35, 0.65],
            splitting_range: [0.02, 0.2],
            splitting_floor_factor: 0.75,
            photons_range: [180_000.0, 3_600_000.0],
        }
    }
}

impl PriorConfig {
    pub fn validated(self) -> Result<Self> {
        for (name, r) in [
            ("width_range", self.width_range),
            ("contrast_range", self.contrast_range),
            ("center_range", self.center_range),
            ("splitting_range", self.splitting_range),
            ("photons_range", self.photons_range),
        ] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(domain!("{name} must be ordered low <= high, got {r:?}"));
            }
        }
        if !(self.width_range[0] > 0.0) || !(self.contrast_range[0] > 0.0) || !(self.photons_range[0] > 0.0) {
            return Err(domain!("widths, contrasts and photon counts must be positive"));
        }
        if !(self.splitting_floor_factor > 0.0 && self.splitting_floor_factor <= 1.0) {
            return Err(domain!("splitting floor factor must lie in (0, 1], got {}", self.splitting_floor_factor));
        }
        if !(self.asym_max > 0.0 && self.asym_max < 1.0) || !(self.asym_sigma >= 0.0) {
            return Err(domain!("asymmetry settings out of range"));
        }
        Ok(self)
    }

    /// Smallest and largest SNR the prior can produce.
    pub fn snr_bounds(&self, n_points: usize) -> (f64, f64) {
        let n = n_points as f64;
        (
            self.contrast_range[0] * (self.photons_range[0] / n).sqrt(),
            self.contrast_range[1] * (self.photons_range[1] / n).sqrt(),
        )
    }
}

/// Regression label. Absolute contrast does not survive Z-scoring, so the
/// contrasts enter only through their ratio `rho = c2 / c1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVector {
    pub center: f64,
    pub splitting: f64,
    pub w1: f64,
    pub w2: f64,
    pub rho: f64,
}

impl TargetVector {
    pub const LEN: usize = 5;

    pub fn from_params(p: &LineshapeParams) -> Self {
        Self { center: p.center(), splitting: p.splitting(), w1: p.w1, w2: p.w2, rho: p.c2 / p.c1 }
    }

    /// Inverse of [`TargetVector::from_params`] given the missing absolute contrast `c1`.
    pub fn to_params(&self, c1: f64) -> LineshapeParams {
        LineshapeParams {
            x1: self.center - self.splitting / 2.0,
            x2: self.center + self.splitting / 2.0,
            w1: self.w1,
            w2: self.w2,
            c1,
            c2: self.rho * c1,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.center, self.splitting, self.w1, self.w2, self.rho]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { center: a[0], splitting: a[1], w1: a[2], w2: a[3], rho: a[4] }
    }
}

/// How Poisson counts are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// Exact Poisson draws up to a mean of 1000, `round(Normal(λ, √λ))` above.
    #[default]
    Hybrid,
    /// Exact Poisson draws everywhere.
    Exact,
}

const EXACT_POISSON_LIMIT: f64 = 1000.0;

/// One synthetic training/benchmark example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpectrum {
    pub normalized: NormalizedSpectrum,
    /// Photon counts.
    pub raw: Spectrum,
    pub truth: LineshapeParams,
    pub snr: f64,
    pub total_photons: f64,
}

impl LabeledSpectrum {
    pub fn target(&self) -> TargetVector {
        TargetVector::from_params(&self.truth)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        r[0] + (r[1] - r[0]) * rng.random::<f64>()
    }
}

/// Draws an asymmetric pair `(base, base(1 - a))` or its swap with equal probability.
fn asymmetric_pair<R: Rng + ?Sized>(rng: &mut R, base: f64, prior: &PriorConfig) -> (f64, f64) {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let a = (z.abs() * prior.asym_sigma).min(prior.asym_max);
    if rng.random_bool(0.5) {
        (base, base * (1.0 - a))
    } else {
        (base * (1.0 - a), base)
    }
}

/// Lower bound on the splitting that keeps the dips from merging.
pub fn apply_splitting_floor(splitting: f64, w1: f64, w2: f64, floor_factor: f64) -> f64 {
    splitting.max(floor_factor * (w1 + w2) / 2.0)
}

/// Samples line-shape parameters from the prior.
///
/// Widths and contrasts use independent asymmetry draws.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, prior: &PriorConfig) -> LineshapeParams {
    let w = uniform(rng, prior.width_range);
    let (w1, w2) = asymmetric_pair(rng, w, prior);
    let c = uniform(rng, prior.contrast_range);
    let (c1, c2) = asymmetric_pair(rng, c, prior);
    let center = uniform(rng, prior.center_range);
    let s = uniform(rng, prior.splitting_range);
    let s = apply_splitting_floor(s, w1, w2, prior.splitting_floor_factor);
    LineshapeParams { x1: center - s / 2.0, x2: center + s / 2.0, w1, w2, c1, c2 }
}

/// Replaces each point by a Poisson count with mean `value * total_photons / n`.
pub fn apply_shot_noise<R: Rng + ?Sized>(s: &Spectrum, rng: &mut R, total_photons: f64, model: NoiseModel) -> Result<Spectrum> {
    if !(total_photons > 0.0) || !total_photons.is_finite() {
        return Err(domain!("total photon count must be positive, got {total_photons}"));
    }
    let per_point = total_photons / s.grid().len() as f64;
    let mut counts = Vec::with_capacity(s.values().len());
    for &v in s.values() {
        let lambda = v * per_point;
        counts.push(poisson_count(rng, lambda, model)?);
    }
    Spectrum::new(*s.grid(), counts)
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, lambda: f64, model: NoiseModel) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(domain!("Poisson mean must be finite and non-negative, got {lambda}"));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    if model == NoiseModel::Hybrid && lambda > EXACT_POISSON_LIMIT {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        return Ok((lambda + lambda.sqrt() * z).round().max(0.0));
    }
    let dist = Poisson::new(lambda).map_err(|e| domain!("Poisson({lambda}): {e}"))?;
    Ok(dist.sample(rng))
}

/// Renders a noisy, normalized example from fixed parameters and photon budget.
pub fn render_example<R: Rng + ?Sized>(
    rng: &mut R,
    truth: LineshapeParams,
    total_photons: f64,
    grid: &FrequencyGrid,
    model: NoiseModel,
) -> Result<LabeledSpectrum> {
    let clean = double_lorentzian(&truth, grid);
    let raw = apply_shot_noise(&clean, rng, total_photons, model)?;
    let normalized = zscore_normalize(&raw)?;
    let snr = snr_of(truth.c1.max(truth.c2), total_photons / grid.len() as f64)?;
    Ok(LabeledSpectrum { normalized, raw, truth, snr, total_photons })
}

/// Item `index` of the stream defined by `seed`.
pub fn generate_item(seed: u64, index: u64, prior: &PriorConfig, model: NoiseModel) -> Result<LabeledSpectrum> {
    let mut rng: StreamRng = rng::stream(seed, rng::domain::SYNTH, index);
    let truth = sample_params(&mut rng, prior);
    let photons = uniform(&mut rng, prior.photons_range);
    render_example(&mut rng, truth, photons, &FrequencyGrid::standard(), model)
}

/// Items `first..first + n` of the stream defined by `seed`.
pub fn generate_batch(seed: u64, first: u64, n: usize, prior: &PriorConfig, model: NoiseModel) -> Result<Vec<LabeledSpectrum>> {
    (0..n as u64).map(|i| generate_item(seed, first + i, prior, model)).collect()
}

/// Cursor over an infinite synthetic stream.
#[derive(Debug, Clone)]
pub struct SynthStream {
    pub seed: u64,
    pub next_index: u64,
    pub prior: PriorConfig,
    pub noise: NoiseModel,
}

impl SynthStream {
    pub fn new(seed: u64, prior: PriorConfig) -> Self {
        Self { seed, next_index: 0, prior, noise: NoiseModel::default() }
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Vec<LabeledSpectrum>> {
        let batch = generate_batch(self.seed, self.next_index, n, &self.prior, self.noise)?;
        self.next_index += n as u64;
        Ok(batch)
    }
}
