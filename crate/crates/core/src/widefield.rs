//! Widefield spectral cubes and per-pixel map post-processing.
//!
//! Parameter maps keep estimates in normalized frequency units together with
//! the cube's physical grid; conversions to MHz/GHz scale by the sweep span.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{domain, Error, Result};
use crate::fitter::upper_quartile_mean;
use crate::physics::{center_to_temperature, splitting_to_bz, PhysicsConstants};
use crate::spectrum::{FrequencyGrid, Spectrum};
use crate::stats::{gaussian_fit_histogram, histogram, GaussianFit, Histogram};
use crate::synth::TargetVector;

/// `H x W x F` photon counts, row-major `(y, x, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    grid: FrequencyGrid,
    counts: Vec<f32>,
}

impl SpectralCube {
    pub fn new(height: usize, width: usize, grid: FrequencyGrid, counts: Vec<f32>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(grid.len()))
            .ok_or_else(|| domain!("cube dimensions overflow"))?;
        if counts.len() != expected {
            return Err(Error::LengthMismatch { expected, got: counts.len() });
        }
        Ok(Self { height, width, grid, counts })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[f32] {
        &self.counts
    }

    /// Counts of pixel `index = y * width + x`.
    pub fn pixel(&self, index: usize) -> &[f32] {
        let f = self.grid.len();
        &self.counts[index * f..(index + 1) * f]
    }

    pub fn pixel_at(&self, y: usize, x: usize) -> &[f32] {
        self.pixel(y * self.width + x)
    }

    pub fn pixel_spectrum(&self, index: usize) -> Result<Spectrum> {
        Spectrum::new(self.grid, self.pixel(index).iter().map(|&v| v as f64).collect())
    }
}

/// Why a pixel carries no usable value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvalidReason {
    LowSnr,
    NotConverged,
    BelowBaseline,
    /// Degenerate data (e.g. all-zero counts) or a failed extraction.
    BadPixel,
}

impl InvalidReason {
    pub fn code(self) -> u8 {
        match self {
            Self::LowSnr => 1,
            Self::NotConverged => 2,
            Self::BelowBaseline => 3,
            Self::BadPixel => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::LowSnr),
            2 => Some(Self::NotConverged),
            3 => Some(Self::BelowBaseline),
            4 => Some(Self::BadPixel),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LowSnr => "low_snr",
            Self::NotConverged => "not_converged",
            Self::BelowBaseline => "below_baseline",
            Self::BadPixel => "bad_pixel",
        }
    }
}

/// Extraction method that produced a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cnn,
    Hybrid,
    McFit,
    /// One LM run from a fixed global initialization.
    SingleFit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::Hybrid => "hybrid",
            Self::McFit => "mc",
            Self::SingleFit => "single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate {
    /// Normalized-unit estimate.
    pub mean: TargetVector,
    pub sigma: Option<[f64; 5]>,
    pub snr: f64,
    pub invalid: Option<InvalidReason>,
}

impl PixelEstimate {
    pub fn invalid(reason: InvalidReason, snr: f64) -> Self {
        Self {
            mean: TargetVector { center: f64::NAN, splitting: f64::NAN, w1: f64::NAN, w2: f64::NAN, rho: f64::NAN },
            sigma: None,
            snr,
            invalid: Some(reason),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }
}

/// Per-pixel estimates over a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    pub height: usize,
    pub width: usize,
    pub grid: FrequencyGrid,
    pub method: Method,
    pub pixels: Vec<PixelEstimate>,
}

impl ParamMap {
    fn span(&self) -> Result<(f64, f64)> {
        self.grid.range_ghz().ok_or_else(|| domain!("map grid has no physical frequency range"))
    }

    /// Center frequency of pixel `i` in GHz.
    pub fn center_ghz(&self, i: usize) -> Result<f64> {
        let (a, b) = self.span()?;
        Ok(a + (b - a) * self.pixels[i].mean.center)
    }

    /// Splitting of pixel `i` in MHz.
    pub fn splitting_mhz(&self, i: usize) -> Result<f64> {
        let (a, b) = self.span()?;
        Ok((b - a) * 1e3 * self.pixels[i].mean.splitting)
    }

    /// Marks valid pixels whose SNR estimate is below `min_snr`.
    pub fn mask_low_snr(&mut self, min_snr: f64) {
        for p in &mut self.pixels {
            if p.invalid.is_none() && !(p.snr >= min_snr) {
                p.invalid = Some(InvalidReason::LowSnr);
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_valid()).count()
    }
}

/// A scalar per pixel (gauss, °C, ...) with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub invalid: Vec<Option<InvalidReason>>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, invalid: Vec<Option<InvalidReason>>) -> Result<Self> {
        let n = height * width;
        if values.len() != n || invalid.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: values.len().min(invalid.len()) });
        }
        Ok(Self { height, width, values, invalid })
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.invalid[i].is_none()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.invalid).filter(|(_, r)| r.is_none()).map(|(v, _)| *v)
    }

    /// `(min, max)` over valid pixels.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

pub type FieldMap = ScalarMap;
pub type TemperatureMap = ScalarMap;

/// Robust SNR of a counts spectrum: `C sqrt(N)` with `N` the mean count per
/// point, `C = (baseline - min) / baseline` and the baseline taken as the
/// mean of the upper quartile.
pub fn estimate_pixel_snr(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() || counts.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(domain!("counts must be finite and non-negative"));
    }
    let n_mean = counts.iter().sum::<f64>() / counts.len() as f64;
    if !(n_mean > 0.0) {
        return Err(Error::Degenerate("all-zero spectrum".into()));
    }
    let baseline = upper_quartile_mean(counts);
    let min = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let contrast = ((baseline - min) / baseline).max(0.0);
    Ok(contrast * n_mean.sqrt())
}

fn check_same_shape(a: &ParamMap, b: &ParamMap) -> Result<()> {
    if a.height != b.height || a.width != b.width || a.pixels.len() != b.pixels.len() {
        return Err(domain!("map dimensions differ: {}x{} vs {}x{}", a.height, a.width, b.height, b.width));
    }
    Ok(())
}

/// Axial field map from a splitting map and a zero-field baseline map.
///
/// Invalid pixels in either input stay invalid (the splitting map's reason
/// wins); splittings below their baseline are reported as zero field with
/// [`InvalidReason::BelowBaseline`].
pub fn field_map(delta: &ParamMap, baseline: &ParamMap, k: &PhysicsConstants) -> Result<FieldMap> {
    check_same_shape(delta, baseline)?;
    let n = delta.pixels.len();
    let mut values = Vec::with_capacity(n);
    let mut invalid = Vec::with_capacity(n);
    for i in 0..n {
        let reason = delta.pixels[i].invalid.or(baseline.pixels[i].invalid);
        if let Some(r) = reason {
            values.push(f64::NAN);
            invalid.push(Some(r));
            continue;
        }
        let d = delta.splitting_mhz(i)?;
        let d0 = baseline.splitting_mhz(i)?;
        if !(d >= 0.0 && d0 >= 0.0) {
            values.push(f64::NAN);
            invalid.push(Some(InvalidReason::BadPixel));
            continue;
        }
        let f = splitting_to_bz(d, d0, k)?;
        values.push(f.bz);
        invalid.push(f.below_baseline.then_some(InvalidReason::BelowBaseline));
    }
    ScalarMap::new(delta.height, delta.width, values, invalid)
}

/// Spread of the center frequency over valid pixels and its thermal equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSpread {
    pub histogram: Histogram,
    pub fit: GaussianFit,
    /// Full width at half maximum of the fitted Gaussian, MHz.
    pub fwhm_mhz: f64,
    /// Half of the FWHM expressed as a temperature, °C (the "±" value).
    pub half_width_c: f64,
}

/// Temperature map and center-frequency histogram from a center map.
pub fn temperature_map(
    centers: &ParamMap,
    d_ref_ghz: f64,
    t_ref_c: f64,
    k: &PhysicsConstants,
    bins: usize,
) -> Result<(TemperatureMap, Option<CenterSpread>)> {
    let n = centers.pixels.len();
    let mut values = Vec::with_capacity(n);
    let mut invalid = Vec::with_capacity(n);
    let mut valid_centers_mhz = Vec::new();
    for i in 0..n {
        if let Some(r) = centers.pixels[i].invalid {
            values.push(f64::NAN);
            invalid.push(Some(r));
            continue;
        }
        let d = centers.center_ghz(i)?;
        values.push(center_to_temperature(d, d_ref_ghz, t_ref_c, k)?);
        invalid.push(None);
        valid_centers_mhz.push(d * 1e3);
    }
    let map = ScalarMap::new(centers.height, centers.width, values, invalid)?;
    let spread = center_spread(&valid_centers_mhz, bins, k)?;
    Ok((map, spread))
}

/// Histogram and Gaussian FWHM of center frequencies given in MHz.
pub fn center_spread(centers_mhz: &[f64], bins: usize, k: &PhysicsConstants) -> Result<Option<CenterSpread>> {
    if centers_mhz.len() < 3 {
        return Ok(None);
    }
    let h = match histogram(centers_mhz, bins) {
        Ok(h) => h,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let Some(fit) = gaussian_fit_histogram(&h) else {
        return Ok(None);
    };
    let fwhm_mhz = fit.fwhm();
    // MHz -> kHz over kHz/°C
    let half_width_c = (fwhm_mhz * 1e3 / 2.0 / k.dd_dt).abs();
    Ok(Some(CenterSpread { histogram: h, fit, fwhm_mhz, half_width_c }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::bz_to_splitting;
    use alloc::vec;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::physical(101, 2.80, 2.94).unwrap()
    }

    fn map_from(splits: &[f64], centers: &[f64]) -> ParamMap {
        let pixels = splits
            .iter()
            .zip(centers)
            .map(|(&s, &c)| PixelEstimate {
                mean: TargetVector { center: c, splitting: s, w1: 0.03, w2: 0.03, rho: 1.0 },
                sigma: None,
                snr: 20.0,
                invalid: None,
            })
            .collect();
        ParamMap { height: 1, width: splits.len(), grid: grid(), method: Method::Cnn, pixels }
    }

    #[test]
    fn cube_axis_order() {
        let g = FrequencyGrid::physical(3, 2.8, 2.9).unwrap();
        let counts: Vec<f32> = (0..2 * 2 * 3).map(|i| i as f32).collect();
        let cube = SpectralCube::new(2, 2, g, counts).unwrap();
        assert_eq!(cube.pixel_at(1, 0), &[6.0, 7.0, 8.0]);
        assert_eq!(cube.pixel_at(0, 1), &[3.0, 4.0, 5.0]);
        assert!(SpectralCube::new(2, 2, g, vec![0.0; 11]).is_err());
    }

    #[test]
    fn snr_estimates() {
        assert_eq!(estimate_pixel_snr(&[1000.0; 101]).unwrap(), 0.0);
        assert!(estimate_pixel_snr(&[0.0; 101]).is_err());
        assert!(estimate_pixel_snr(&[1.0, -1.0, 2.0]).is_err());
    }

    #[test]
    fn equal_maps_give_zero_field() {
        let m = map_from(&[0.05, 0.1, 0.15], &[0.5; 3]);
        let f = field_map(&m, &m, &PhysicsConstants::default()).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!(f.invalid.iter().all(|r| r.is_none()));
    }

    #[test]
    fn field_round_trip_and_masks() {
        let k = PhysicsConstants::default();
        let span_mhz = 140.0;
        let d0 = 4.0;
        let fields = [0.0, 0.5, 1.7, 3.2];
        let splits: Vec<f64> = fields.iter().map(|&b| bz_to_splitting(b, d0, &k) / span_mhz).collect();
        let delta = map_from(&splits, &[0.5; 4]);
        let mut base = map_from(&[d0 / span_mhz; 4], &[0.5; 4]);
        let f = field_map(&delta, &base, &k).unwrap();
        for (got, want) in f.values.iter().zip(fields) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        base.pixels[2].invalid = Some(InvalidReason::NotConverged);
        let f = field_map(&delta, &base, &k).unwrap();
        assert_eq!(f.invalid[2], Some(InvalidReason::NotConverged));
        // below baseline
        let low = map_from(&[2.0 / span_mhz; 4], &[0.5; 4]);
        let f = field_map(&low, &base, &k).unwrap();
        assert_eq!(f.invalid[0], Some(InvalidReason::BelowBaseline));
        assert_eq!(f.values[0], 0.0);
        let wrong = map_from(&[0.1; 3], &[0.5; 3]);
        assert!(field_map(&wrong, &base, &k).is_err());
    }

    #[test]
    fn constant_center_gives_reference_temperature() {
        let k = PhysicsConstants::default();
        let c = (2.87 - 2.80) / 0.14;
        let m = map_from(&[0.1; 5], &[c; 5]);
        let (t, _) = temperature_map(&m, m.center_ghz(0).unwrap(), 25.0, &k, 16).unwrap();
        assert!(t.values.iter().all(|&v| v == 25.0));
    }
}
