//! Scalar conversions from resonance splitting to axial field and from
//! center frequency to temperature.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsConstants {
    /// Electron gyromagnetic ratio in MHz/G.
    pub gamma_e: f64,
    /// Zero-field splitting in GHz.
    pub d_gs: f64,
    /// Thermal shift of the zero-field splitting in kHz/°C.
    pub dd_dt: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self { gamma_e: 2.8025, d_gs: 2.87, dd_dt: -66.5 }
    }
}

impl PhysicsConstants {
    pub fn validated(self) -> Result<Self> {
        if !(self.gamma_e > 0.0) || !self.gamma_e.is_finite() {
            return Err(domain!("gamma_e must be positive, got {}", self.gamma_e));
        }
        if !(self.dd_dt < 0.0) || !self.dd_dt.is_finite() {
            return Err(domain!("dD/dT must be negative, got {}", self.dd_dt));
        }
        Ok(self)
    }
}

/// Axial field recovered from a splitting, together with the below-baseline flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEstimate {
    /// Field in gauss; `0` when the splitting is below the zero-field baseline.
    pub bz: f64,
    pub below_baseline: bool,
}

/// `B_z = sqrt((δ / 2γ)² - (δ0 / 2γ)²)` for splittings in MHz.
///
/// A splitting below its zero-field baseline has no real solution; the field
/// is reported as zero and flagged instead.
pub fn splitting_to_bz(delta_mhz: f64, delta0_mhz: f64, k: &PhysicsConstants) -> Result<FieldEstimate> {
    if !(delta_mhz >= 0.0) || !(delta0_mhz >= 0.0) {
        return Err(domain!("splittings must be non-negative, got delta={delta_mhz}, delta0={delta0_mhz}"));
    }
    if !(k.gamma_e > 0.0) {
        return Err(domain!("gamma_e must be positive, got {}", k.gamma_e));
    }
    if delta_mhz < delta0_mhz {
        return Ok(FieldEstimate { bz: 0.0, below_baseline: true });
    }
    let a = delta_mhz / (2.0 * k.gamma_e);
    let b = delta0_mhz / (2.0 * k.gamma_e);
    // (a - b)(a + b) keeps precision when the two splittings are close
    Ok(FieldEstimate { bz: ((a - b) * (a + b)).sqrt(), below_baseline: false })
}

/// Forward model: splitting (MHz) produced by an axial field `bz_g` on top of
/// a zero-field splitting `delta0_mhz`, i.e. `2 sqrt((δ0/2)² + (γ B)²)`.
pub fn bz_to_splitting(bz_g: f64, delta0_mhz: f64, k: &PhysicsConstants) -> f64 {
    let transverse = delta0_mhz / 2.0;
    2.0 * (transverse * transverse + (k.gamma_e * bz_g) * (k.gamma_e * bz_g)).sqrt()
}

/// Temperature (°C) from a center frequency via the linear thermal shift.
pub fn center_to_temperature(d_ghz: f64, d_ref_ghz: f64, t_ref_c: f64, k: &PhysicsConstants) -> Result<f64> {
    if k.dd_dt == 0.0 || !k.dd_dt.is_finite() {
        return Err(domain!("thermal coefficient must be non-zero, got {}", k.dd_dt));
    }
    // GHz -> kHz
    Ok(t_ref_c + (d_ghz - d_ref_ghz) * 1e6 / k.dd_dt)
}
