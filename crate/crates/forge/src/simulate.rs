//! Synthetic widefield cubes with known ground truth.

use rayon::prelude::*;

use odmr_core::physics::{bz_to_splitting, PhysicsConstants};
use odmr_core::rng::{domain, stream};
use odmr_core::spectrum::{double_lorentzian, FrequencyGrid, LineshapeParams};
use odmr_core::synth::{apply_shot_noise, NoiseModel};
use odmr_core::widefield::SpectralCube;

use crate::error::Result;

/// Renders one spectrum per pixel. `snr` fixes the photon budget through the
/// deeper dip; `None` stores the noiseless expectation.
pub fn render_cube(
    height: usize,
    width: usize,
    grid: FrequencyGrid,
    truth: &[LineshapeParams],
    snr: f64,
    noise: Option<(u64, NoiseModel)>,
) -> Result<SpectralCube> {
    let f = grid.len();
    let unit = FrequencyGrid::normalized(f)?;
    let counts: Vec<Vec<f32>> = truth
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let clean = double_lorentzian(p, &unit);
            let total = f as f64 * (snr / p.c1.max(p.c2)).powi(2);
            let values = match noise {
                Some((seed, model)) => apply_shot_noise(&clean, &mut stream(seed, domain::PIXEL, i as u64), total, model)?.into_values(),
                None => clean.values().iter().map(|v| v * total / f as f64).collect(),
            };
            Ok(values.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    Ok(SpectralCube::new(height, width, grid, counts.concat())?)
}

/// Flux-vortex test pattern: Gaussian field bumps on a uniform background.
#[derive(Debug, Clone, PartialEq)]
pub struct VortexSpec {
    pub height: usize,
    pub width: usize,
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub background_g: f64,
    pub peak_g: f64,
    /// Gaussian radius of each bump, pixels.
    pub radius_px: f64,
    /// Bump centers as fractions of (height, width).
    pub vortices: Vec<(f64, f64)>,
    /// Intrinsic zero-field splitting, MHz.
    pub delta0_mhz: f64,
    pub center_ghz: f64,
    pub width_norm: f64,
    pub contrast: f64,
}

impl Default for VortexSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            start_ghz: 2.80,
            stop_ghz: 2.94,
            background_g: 1.5,
            peak_g: 3.0,
            radius_px: 6.0,
            vortices: vec![(0.3, 0.3), (0.3, 0.72), (0.7, 0.5), (0.75, 0.15)],
            delta0_mhz: 7.0,
            center_ghz: 2.87,
            width_norm: 0.02,
            contrast: 0.05,
        }
    }
}

impl VortexSpec {
    /// The default pattern resampled onto another image size; the bump
    /// radius scales with the shorter side so the field range is unchanged.
    pub fn sized(height: usize, width: usize) -> Self {
        let d = Self::default();
        let scale = height.min(width) as f64 / d.height.min(d.width) as f64;
        Self { height, width, radius_px: d.radius_px * scale, ..d }
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        Ok(FrequencyGrid::physical(odmr_core::INPUT_LENGTH, self.start_ghz, self.stop_ghz)?)
    }

    /// Axial field per pixel, gauss.
    pub fn field(&self) -> Vec<f64> {
        let mut b = vec![self.background_g; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                for &(fy, fx) in &self.vortices {
                    let dy = y as f64 - fy * self.height as f64;
                    let dx = x as f64 - fx * self.width as f64;
                    b[y * self.width + x] += self.peak_g * (-(dx * dx + dy * dy) / (2.0 * self.radius_px * self.radius_px)).exp();
                }
            }
        }
        b
    }

    fn lineshapes(&self, splittings_mhz: &[f64]) -> Result<Vec<LineshapeParams>> {
        let grid = self.grid()?;
        let span_mhz = grid.span_ghz().expect("physical grid") * 1e3;
        let center = grid.from_ghz(self.center_ghz).expect("physical grid");
        splittings_mhz
            .iter()
            .map(|d| {
                Ok(LineshapeParams::from_center_splitting(
                    center,
                    d / span_mhz,
                    self.width_norm,
                    self.width_norm,
                    self.contrast,
                    0.9 * self.contrast,
                )?)
            })
            .collect()
    }

    /// `(field cube, zero-field baseline cube, true field)`.
    pub fn cubes(&self, snr: f64, noise: Option<(u64, NoiseModel)>, k: &PhysicsConstants) -> Result<(SpectralCube, SpectralCube, Vec<f64>)> {
        let b = self.field();
        let deltas: Vec<f64> = b.iter().map(|&b| bz_to_splitting(b, self.delta0_mhz, k)).collect();
        let base = vec![self.delta0_mhz; b.len()];
        let grid = self.grid()?;
        let base_noise = noise.map(|(s, m)| (s.wrapping_add(0x9e37_79b9_7f4a_7c15), m));
        let cube = render_cube(self.height, self.width, grid, &self.lineshapes(&deltas)?, snr, noise)?;
        let baseline = render_cube(self.height, self.width, grid, &self.lineshapes(&base)?, snr, base_noise)?;
        Ok((cube, baseline, b))
    }
}
