//! Spectrum inputs for `infer` and `fit`: `ODMRSYN1` files, dataset CSV, or a
//! plain CSV of counts with one spectrum per row and no header.

use std::path::Path;

use super::dataset;
use crate::error::{format_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SpectraInput {
    /// Z-scored spectra as stored in datasets.
    Normalized(Vec<Vec<f64>>),
    /// Raw counts (or any positive intensity).
    Counts(Vec<Vec<f64>>),
}

impl SpectraInput {
    pub fn len(&self) -> usize {
        match self {
            Self::Normalized(v) | Self::Counts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_spectra(path: &Path) -> Result<SpectraInput> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(dataset::MAGIC) {
        return Ok(SpectraInput::Normalized(
            dataset::decode(&bytes)?.into_iter().map(|r| r.input.iter().map(|&v| v as f64).collect()).collect(),
        ));
    }
    if bytes.starts_with(b"v0,") {
        return Ok(SpectraInput::Normalized(
            dataset::read_csv(&bytes[..])?.into_iter().map(|r| r.input.iter().map(|&v| v as f64).collect()).collect(),
        ));
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(&bytes[..]);
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(format_err(format!("{} row {}: {} values, expected {first}", path.display(), i + 1, row.len())));
            }
        }
        rows.push(row);
    }
    Ok(SpectraInput::Counts(rows))
}

/// Positive stand-in for a Z-scored spectrum: `1 + k z`, with `k` chosen so
/// the total dip depth is 10% of the baseline.
///
/// Any positive affine image of `b (1 - c1 L1 - c2 L2)` is again of that
/// form with the same positions and widths, so fitting the lifted curve
/// recovers the line shape; only the contrasts are rescaled.
pub fn lift_normalized(z: &[f64]) -> Vec<f64> {
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let k = if hi > lo { 0.1 / (hi - lo) } else { 0.0 };
    z.iter().map(|v| 1.0 + k * v).collect()
}
