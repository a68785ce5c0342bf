//! `ODMRCUBE` spectral cubes.
//!
//! ```text
//! "ODMRCUBE"  u16 version = 1
//! u32 H  u32 W  u32 F  f64 f_start_ghz  f64 f_stop_ghz
//! f32 * (H * W * F)    row-major (y, x, f)
//! ```

use std::path::Path;

use odmr_core::spectrum::FrequencyGrid;
use odmr_core::widefield::SpectralCube;

use super::{put_f32s, Reader};
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 8] = b"ODMRCUBE";
pub const VERSION: u16 = 1;

pub fn encode(cube: &SpectralCube) -> Result<Vec<u8>> {
    let (start, stop) = cube.grid().range_ghz().ok_or_else(|| format_err("cube grid has no physical frequency range"))?;
    let dim = |v: usize, name: &str| u32::try_from(v).map_err(|_| format_err(format!("cube {name} {v} exceeds u32")));
    let mut out = Vec::with_capacity(38 + cube.counts().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, name) in [(cube.height(), "height"), (cube.width(), "width"), (cube.grid().len(), "frequency count")] {
        out.extend_from_slice(&dim(v, name)?.to_le_bytes());
    }
    out.extend_from_slice(&start.to_le_bytes());
    out.extend_from_slice(&stop.to_le_bytes());
    put_f32s(&mut out, cube.counts().iter().copied());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SpectralCube> {
    let mut r = Reader::new(bytes, "cube");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(format_err(format!("cube version {version} is not supported (expected {VERSION})")));
    }
    let (h, w, f) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let (start, stop) = (r.f64()?, r.f64()?);
    let grid = FrequencyGrid::physical(f, start, stop).map_err(|e| format_err(format!("cube frequency axis: {e}")))?;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(f))
        .ok_or_else(|| format_err("cube dimensions overflow"))?;
    let counts = r.f32s(n)?;
    r.finish()?;
    Ok(SpectralCube::new(h, w, grid, counts)?)
}

pub fn save(cube: &SpectralCube, path: &Path) -> Result<()> {
    std::fs::write(path, encode(cube)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SpectralCube> {
    decode(&std::fs::read(path)?)
}
