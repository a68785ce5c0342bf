//! Double-Lorentzian forward model, frequency grids and Z-score normalization.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{domain, Error, Result};

/// Uniform frequency axis.
///
/// Point `i` sits at `i / (n_points - 1)` in normalized coordinates. When a
/// physical range is attached, the same point maps affinely onto
/// `[start_ghz, stop_ghz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    n_points: usize,
    physical: Option<(f64, f64)>,
}

impl FrequencyGrid {
    pub fn normalized(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(domain!("grid needs at least 3 points, got {n_points}"));
        }
        Ok(Self { n_points, physical: None })
    }

    pub fn physical(n_points: usize, start_ghz: f64, stop_ghz: f64) -> Result<Self> {
        let mut grid = Self::normalized(n_points)?;
        if !(start_ghz.is_finite() && stop_ghz.is_finite() && start_ghz < stop_ghz) {
            return Err(domain!("grid range must satisfy start < stop, got [{start_ghz}, {stop_ghz}]"));
        }
        grid.physical = Some((start_ghz, stop_ghz));
        Ok(grid)
    }

    /// The 101-point unit grid the network is trained on.
    pub fn standard() -> Self {
        Self { n_points: crate::INPUT_LENGTH, physical: None }
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range_ghz(&self) -> Option<(f64, f64)> {
        self.physical
    }

    /// Sweep span in GHz, if the grid carries physical units.
    pub fn span_ghz(&self) -> Option<f64> {
        self.physical.map(|(a, b)| b - a)
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Maps a normalized coordinate onto the physical axis (GHz).
    pub fn to_ghz(&self, x: f64) -> Option<f64> {
        self.physical.map(|(a, b)| a + (b - a) * x)
    }

    /// Maps a physical frequency (GHz) onto the normalized axis.
    pub fn from_ghz(&self, f: f64) -> Option<f64> {
        self.physical.map(|(a, b)| (f - a) / (b - a))
    }
}

/// The six double-Lorentzian parameters in normalized frequency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineshapeParams {
    pub x1: f64,
    pub x2: f64,
    pub w1: f64,
    pub w2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LineshapeParams {
    /// Builds parameters from the center/splitting view.
    pub fn from_center_splitting(center: f64, splitting: f64, w1: f64, w2: f64, c1: f64, c2: f64) -> Result<Self> {
        Self { x1: center - splitting / 2.0, x2: center + splitting / 2.0, w1, w2, c1, c2 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let all = [self.x1, self.x2, self.w1, self.w2, self.c1, self.c2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(domain!("non-finite line-shape parameter in {self:?}"));
        }
        if self.x1 > self.x2 {
            return Err(domain!("dip order violated: x1={} > x2={}", self.x1, self.x2));
        }
        if self.w1 <= 0.0 || self.w2 <= 0.0 {
            return Err(domain!("widths must be positive: w1={}, w2={}", self.w1, self.w2));
        }
        if !(0.0..1.0).contains(&self.c1) || !(0.0..1.0).contains(&self.c2) {
            return Err(domain!("contrasts must lie in [0, 1): c1={}, c2={}", self.c1, self.c2));
        }
        Ok(self)
    }

    pub fn center(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn splitting(&self) -> f64 {
        self.x2 - self.x1
    }

    /// Value of the line shape at normalized frequency `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        1.0 - self.c1 * lorentzian_unchecked(x, self.x1, self.w1) - self.c2 * lorentzian_unchecked(x, self.x2, self.w2)
    }
}

/// Sampled spectrum on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain!("non-finite spectrum value at index {i}"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Copy divided by its own mean, so that the off-resonance level sits near one.
    pub fn mean_normalized(&self) -> Result<Self> {
        let m = self.mean();
        if !(m > 0.0) {
            return Err(Error::Degenerate(alloc::format!("spectrum mean must be positive, got {m}")));
        }
        Ok(Self { grid: self.grid, values: self.values.iter().map(|v| v / m).collect() })
    }
}

/// Z-scored spectrum that remembers the statistics it removed.
///
/// The standard deviation uses the population convention (divide by `n`).
/// Training and inference both go through [`zscore_normalize`], so the
/// feature map is identical on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectrum {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl NormalizedSpectrum {
    pub fn denormalize(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.std + self.mean).collect()
    }
}

fn lorentzian_unchecked(x: f64, x0: f64, w: f64) -> f64 {
    let u = (x - x0) / w;
    1.0 / (1.0 + u * u)
}

/// Unit-height Lorentzian `1 / (1 + (x - x0)^2 / w^2)`.
pub fn lorentzian(x: f64, x0: f64, w: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(domain!("Lorentzian width must be positive, got {w}"));
    }
    Ok(lorentzian_unchecked(x, x0, w))
}

/// Samples `1 - c1 L(x; x1, w1) - c2 L(x; x2, w2)` on every grid point.
pub fn double_lorentzian(params: &LineshapeParams, grid: &FrequencyGrid) -> Spectrum {
    let values = grid.points().map(|x| params.eval(x)).collect();
    Spectrum { grid: *grid, values }
}

/// Z-score normalization of a raw value slice.
pub fn zscore(values: &[f64]) -> Result<NormalizedSpectrum> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(alloc::format!("need at least 2 values, got {n}")));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::Degenerate(alloc::format!("spectrum is constant")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Degenerate(alloc::format!("spectrum has zero variance")));
    }
    Ok(NormalizedSpectrum { values: values.iter().map(|v| (v - mean) / std).collect(), mean, std })
}

pub fn zscore_normalize(s: &Spectrum) -> Result<NormalizedSpectrum> {
    zscore(s.values())
}

/// Signal-to-noise ratio `C * sqrt(N)` with `N` the photon count per point.
pub fn snr_of(contrast: f64, photons_per_point: f64) -> Result<f64> {
    if !(contrast > 0.0 && contrast < 1.0) {
        return Err(domain!("contrast must lie in (0, 1), got {contrast}"));
    }
    if !(photons_per_point > 0.0) || !photons_per_point.is_finite() {
        return Err(domain!("photon count must be positive, got {photons_per_point}"));
    }
    Ok(contrast * photons_per_point.sqrt())
}
