//! `NVCNN1` checkpoints.
//!
//! ```text
//! "NVCNN1\0"  u16 version = 1
//! u16 n_conv  { u32 in, u32 out, u32 kernel } * n_conv
//! u16 n_fc    { u32 in, u32 out } * n_fc
//! u64 param_count
//! f32 * param_count            layer order, kernel then bias
//! optional: "OPT1" u64 step, f32 * param_count (first moments), f32 * param_count (second moments)
//! ```
//!
//! The input length is not stored; it is recovered from the first dense
//! layer (or taken as 101 for networks without one).

use std::path::Path;

use odmr_core::nn::{ArchSpec, ConvSpec, FcSpec, ModelWeights, Moments};
use odmr_core::INPUT_LENGTH;

use super::{put_f32s, Reader};
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 7] = b"NVCNN1\0";
pub const VERSION: u16 = 1;
const OPT_TAG: &[u8; 4] = b"OPT1";

pub fn encode(weights: &ModelWeights<f32>) -> Vec<u8> {
    let arch = weights.arch();
    let mut out = Vec::with_capacity(64 + weights.len() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.conv_layers().len() as u16).to_le_bytes());
    for c in arch.conv_layers() {
        for v in [c.in_channels, c.out_channels, c.kernel] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(arch.fc_layers().len() as u16).to_le_bytes());
    for f in arch.fc_layers() {
        for v in [f.in_features, f.out_features] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(arch.param_count() as u64).to_le_bytes());
    put_f32s(&mut out, weights.params.iter().copied());
    if let Some(m) = &weights.moments {
        out.extend_from_slice(OPT_TAG);
        out.extend_from_slice(&weights.step.to_le_bytes());
        put_f32s(&mut out, m.first.iter().copied());
        put_f32s(&mut out, m.second.iter().copied());
    }
    out
}

fn infer_input_length(conv: &[ConvSpec], fc: &[FcSpec]) -> Result<usize> {
    let Some(first) = fc.first() else {
        return Ok(INPUT_LENGTH);
    };
    let channels = conv.last().map_or(1, |c| c.out_channels);
    if channels == 0 || first.in_features % channels != 0 {
        return Err(format_err("first dense layer does not match the last convolution"));
    }
    let shrink: usize = conv.iter().map(|c| c.kernel.saturating_sub(1)).sum();
    Ok(first.in_features / channels + shrink)
}

pub fn decode(bytes: &[u8]) -> Result<ModelWeights<f32>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(format_err(format!("checkpoint version {version} is not supported (expected {VERSION})")));
    }
    let n_conv = r.u16()? as usize;
    let mut conv = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        conv.push(ConvSpec { in_channels: r.u32()? as usize, out_channels: r.u32()? as usize, kernel: r.u32()? as usize });
    }
    let n_fc = r.u16()? as usize;
    let mut fc = Vec::with_capacity(n_fc);
    for _ in 0..n_fc {
        fc.push(FcSpec { in_features: r.u32()? as usize, out_features: r.u32()? as usize });
    }
    let declared = r.u64()?;
    let input_length = infer_input_length(&conv, &fc)?;
    let arch = ArchSpec::new(input_length, conv, fc).map_err(|e| format_err(format!("checkpoint architecture: {e}")))?;
    let count = arch.param_count();
    if declared != count as u64 {
        return Err(format_err(format!("header declares {declared} parameters but the architecture has {count}")));
    }
    let params = r.f32s(count)?;
    let mut weights = ModelWeights::from_params(arch, params)?;
    if r.remaining() > 0 {
        if r.peek(OPT_TAG.len()) != Some(&OPT_TAG[..]) {
            return Err(format_err("unknown section after the weights"));
        }
        r.take(OPT_TAG.len())?;
        weights.step = r.u64()?;
        let first = r.f32s(count)?;
        let second = r.f32s(count)?;
        weights.moments = Some(Moments { first, second });
    }
    r.finish()?;
    Ok(weights)
}

pub fn save(weights: &ModelWeights<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(weights))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelWeights<f32>> {
    decode(&std::fs::read(path)?)
}
