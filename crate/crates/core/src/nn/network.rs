//! Batched forward and backward passes.
//!
//! Activations of a convolution are stored as `[channel][sample][position]`
//! so a whole batch becomes one matrix product against an im2col buffer.
//! Dense activations are `[sample][feature]`. "Convolution" here is the
//! deep-learning cross-correlation `y[o, t] = b[o] + Σ_c Σ_j w[o, c, j] x[c, t + j]`.

use alloc::vec;
use alloc::vec::Vec;

use super::arch::{ConvSpec, FcSpec, OUTPUT_DIM};
use super::loss::{gaussian_nll_loss, LOG_VAR_MAX, LOG_VAR_MIN};
use super::real::{gemm, gemm_strided, Mat, Real};
use super::weights::ModelWeights;
use super::Prediction;
use crate::error::{Error, Result};
use crate::synth::TargetVector;

/// Activations retained by [`ModelWeights::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    input: Vec<T>,
    conv_channels: Vec<usize>,
    conv_out: Vec<Vec<T>>,
    flat: Vec<T>,
    fc_out: Vec<Vec<T>>,
    param_count: usize,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of convolution `layer` for sample `b` and channel `c`.
    pub fn conv_feature(&self, layer: usize, c: usize, b: usize) -> &[T] {
        let out = &self.conv_out[layer];
        let len = out.len() / self.batch / self.channels(layer);
        &out[(c * self.batch + b) * len..(c * self.batch + b + 1) * len]
    }

    fn channels(&self, layer: usize) -> usize {
        self.conv_channels[layer]
    }

    /// Raw network output for sample `b` (means, then unclamped log-variances).
    pub fn head(&self, b: usize) -> &[T] {
        let out = self.final_output();
        let d = out.len() / self.batch;
        &out[b * d..(b + 1) * d]
    }

    fn final_output(&self) -> &[T] {
        match self.fc_out.last() {
            Some(v) => v,
            None => self.conv_out.last().unwrap_or(&self.input),
        }
    }

    /// Predictions for every sample, with clamped log-variances.
    pub fn predictions(&self) -> Result<Vec<Prediction>> {
        (0..self.batch).map(|b| Prediction::from_head(self.head(b))).collect()
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn im2col<T: Real>(spec: &ConvSpec, input: &[T], batch: usize, lin: usize) -> Vec<T> {
    let lout = lin - spec.kernel + 1;
    let cols = batch * lout;
    let mut col = vec![T::zero(); spec.in_channels * spec.kernel * cols];
    for c in 0..spec.in_channels {
        for j in 0..spec.kernel {
            let row = &mut col[(c * spec.kernel + j) * cols..(c * spec.kernel + j + 1) * cols];
            for b in 0..batch {
                let src = (c * batch + b) * lin + j;
                row[b * lout..(b + 1) * lout].copy_from_slice(&input[src..src + lout]);
            }
        }
    }
    col
}

fn col2im_add<T: Real>(spec: &ConvSpec, dcol: &[T], batch: usize, lin: usize, dx: &mut [T]) {
    let lout = lin - spec.kernel + 1;
    let cols = batch * lout;
    for c in 0..spec.in_channels {
        for j in 0..spec.kernel {
            let row = &dcol[(c * spec.kernel + j) * cols..(c * spec.kernel + j + 1) * cols];
            for b in 0..batch {
                let dst = &mut dx[(c * batch + b) * lin + j..(c * batch + b) * lin + j + lout];
                for (d, s) in dst.iter_mut().zip(&row[b * lout..(b + 1) * lout]) {
                    *d += *s;
                }
            }
        }
    }
}

/// Layers with at least this many input channels run as `kernel` shifted
/// products over the batch laid end to end instead of through im2col.
const SHIFTED_MIN_CHANNELS: usize = 16;

fn conv_forward<T: Real>(spec: &ConvSpec, w: &[T], bias: &[T], input: &[T], batch: usize, lin: usize) -> Vec<T> {
    if spec.in_channels >= SHIFTED_MIN_CHANNELS {
        return conv_forward_shifted(spec, w, bias, input, batch, lin);
    }
    let lout = lin - spec.kernel + 1;
    let cols = batch * lout;
    let col = im2col(spec, input, batch, lin);
    let mut out = vec![T::zero(); spec.out_channels * cols];
    for (o, row) in out.chunks_exact_mut(cols).enumerate() {
        row.fill(bias[o]);
    }
    let ck = spec.in_channels * spec.kernel;
    gemm(T::one(), Mat::row_major(w, spec.out_channels, ck), Mat::row_major(&col, ck, cols), T::one(), &mut out);
    out
}

/// Treats the `[channel][sample * lin]` rows as one long sequence. Output
/// columns that straddle two samples are computed and then dropped.
fn conv_forward_shifted<T: Real>(spec: &ConvSpec, w: &[T], bias: &[T], input: &[T], batch: usize, lin: usize) -> Vec<T> {
    let k = spec.kernel;
    let lout = lin - k + 1;
    let ntot = batch * lin;
    let nv = ntot - k + 1;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let mut long = vec![T::zero(); cout * nv];
    for (o, row) in long.chunks_exact_mut(nv).enumerate() {
        row.fill(bias[o]);
    }
    for j in 0..k {
        gemm(
            T::one(),
            Mat::new(&w[j..], cout, cin, cin * k, k),
            Mat::new(&input[j..], cin, nv, ntot, 1),
            T::one(),
            &mut long,
        );
    }
    let mut out = vec![T::zero(); cout * batch * lout];
    for o in 0..cout {
        for b in 0..batch {
            out[(o * batch + b) * lout..(o * batch + b + 1) * lout]
                .copy_from_slice(&long[o * nv + b * lin..o * nv + b * lin + lout]);
        }
    }
    out
}

/// Gradients of a shifted convolution. `upstream` is `[cout][batch * lout]`;
/// returns the input gradient `[cin][batch * lin]` when `need_input`.
#[allow(clippy::too_many_arguments)]
fn conv_backward_shifted<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    input: &[T],
    upstream: &[T],
    batch: usize,
    lin: usize,
    gw: &mut [T],
    need_input: bool,
) -> Option<Vec<T>> {
    let k = spec.kernel;
    let lout = lin - k + 1;
    let ntot = batch * lin;
    let nv = ntot - k + 1;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    // upstream spread onto the long layout, zero in the straddling columns
    let mut long = vec![T::zero(); cout * nv];
    for o in 0..cout {
        for b in 0..batch {
            long[o * nv + b * lin..o * nv + b * lin + lout]
                .copy_from_slice(&upstream[(o * batch + b) * lout..(o * batch + b + 1) * lout]);
        }
    }
    for j in 0..k {
        gemm_strided(
            T::one(),
            Mat::row_major(&long, cout, nv),
            Mat::new(&input[j..], nv, cin, 1, ntot),
            T::zero(),
            &mut gw[j..],
            cin * k,
            k,
        );
    }
    if !need_input {
        return None;
    }
    let mut dx = vec![T::zero(); cin * ntot];
    for j in 0..k {
        gemm_strided(
            T::one(),
            Mat::new(&w[j..], cin, cout, k, cin * k),
            Mat::row_major(&long, cout, nv),
            T::one(),
            &mut dx[j..],
            ntot,
            1,
        );
    }
    Some(dx)
}

fn fc_forward<T: Real>(spec: &FcSpec, w: &[T], bias: &[T], input: &[T], batch: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * spec.out_features];
    for row in out.chunks_exact_mut(spec.out_features) {
        row.copy_from_slice(bias);
    }
    gemm(
        T::one(),
        Mat::row_major(input, batch, spec.in_features),
        Mat::transposed(w, spec.out_features, spec.in_features),
        T::one(),
        &mut out,
    );
    out
}

/// Zeroes upstream gradients where the ReLU output was clipped.
fn relu_mask<T: Real>(grad: &mut [T], out: &[T]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Real> ModelWeights<T> {
    /// Runs `batch` inputs stored back to back (`batch * input_length` values).
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<ForwardCache<T>> {
        let arch = self.arch();
        let lin0 = arch.input_length();
        if batch == 0 || inputs.len() != batch * lin0 {
            return Err(Error::LengthMismatch { expected: batch.max(1) * lin0, got: inputs.len() });
        }
        let n_conv = arch.conv_layers().len();
        let n_layers = n_conv + arch.fc_layers().len();
        let lengths = arch.lengths();

        let mut conv_out: Vec<Vec<T>> = Vec::with_capacity(n_conv);
        for (l, spec) in arch.conv_layers().iter().enumerate() {
            let input = if l == 0 { inputs } else { &conv_out[l - 1][..] };
            let mut out = conv_forward(spec, self.layer_weight(l), self.layer_bias(l), input, batch, lengths[l]);
            if l + 1 < n_layers {
                relu(&mut out);
            }
            conv_out.push(out);
        }

        let channels = arch.conv_out_channels();
        let len = *lengths.last().expect("non-empty");
        let features = channels * len;
        let mut flat = vec![T::zero(); batch * features];
        {
            let src = conv_out.last().map_or(inputs, |v| &v[..]);
            for c in 0..channels {
                for b in 0..batch {
                    flat[b * features + c * len..b * features + (c + 1) * len]
                        .copy_from_slice(&src[(c * batch + b) * len..(c * batch + b + 1) * len]);
                }
            }
        }

        let mut fc_out: Vec<Vec<T>> = Vec::with_capacity(arch.fc_layers().len());
        for (i, spec) in arch.fc_layers().iter().enumerate() {
            let l = n_conv + i;
            let input = if i == 0 { &flat[..] } else { &fc_out[i - 1][..] };
            let mut out = fc_forward(spec, self.layer_weight(l), self.layer_bias(l), input, batch);
            if l + 1 < n_layers {
                relu(&mut out);
            }
            fc_out.push(out);
        }

        Ok(ForwardCache {
            batch,
            input: inputs.to_vec(),
            conv_channels: arch.conv_layers().iter().map(|c| c.out_channels).collect(),
            conv_out,
            flat,
            fc_out,
            param_count: self.len(),
        })
    }

    /// Single-spectrum forward pass.
    pub fn forward(&self, input: &[T]) -> Result<(Prediction, ForwardCache<T>)> {
        let cache = self.forward_batch(input, 1)?;
        let pred = Prediction::from_head(cache.head(0))?;
        Ok((pred, cache))
    }

    pub fn predict(&self, input: &[T]) -> Result<Prediction> {
        self.forward(input).map(|(p, _)| p)
    }

    /// Predictions for `batch` inputs stored back to back.
    pub fn predict_batch(&self, inputs: &[T], batch: usize) -> Result<Vec<Prediction>> {
        self.forward_batch(inputs, batch)?.predictions()
    }

    /// Backpropagates `head_grad` (gradient w.r.t. the raw network output,
    /// `batch * output_dim` values) and returns the parameter gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, head_grad: &[T]) -> Result<Vec<T>> {
        let arch = self.arch();
        let batch = cache.batch;
        if cache.param_count != self.len() || cache.conv_out.len() != arch.conv_layers().len() {
            return Err(Error::Arch("forward cache does not belong to these weights".into()));
        }
        if head_grad.len() != batch * arch.output_dim() {
            return Err(Error::LengthMismatch { expected: batch * arch.output_dim(), got: head_grad.len() });
        }
        let n_conv = arch.conv_layers().len();
        let lengths = arch.lengths();
        let mut grads = vec![T::zero(); self.len()];
        let mut upstream = head_grad.to_vec();

        for (i, spec) in arch.fc_layers().iter().enumerate().rev() {
            let l = n_conv + i;
            let slot = &self.slots()[l];
            let input = if i == 0 { &cache.flat[..] } else { &cache.fc_out[i - 1][..] };
            let (gw, gb) = grads[slot.weight.start..slot.bias.end].split_at_mut(slot.weight.len());
            gemm(
                T::one(),
                Mat::transposed(&upstream, batch, spec.out_features),
                Mat::row_major(input, batch, spec.in_features),
                T::zero(),
                gw,
            );
            for row in upstream.chunks_exact(spec.out_features) {
                for (g, u) in gb.iter_mut().zip(row) {
                    *g += *u;
                }
            }
            if l == 0 {
                break;
            }
            let mut down = vec![T::zero(); batch * spec.in_features];
            gemm(
                T::one(),
                Mat::row_major(&upstream, batch, spec.out_features),
                Mat::row_major(self.layer_weight(l), spec.out_features, spec.in_features),
                T::zero(),
                &mut down,
            );
            if i > 0 {
                relu_mask(&mut down, &cache.fc_out[i - 1]);
            }
            upstream = down;
        }

        if n_conv == 0 {
            return Ok(grads);
        }

        // unflatten into [channel][sample][position]
        if !arch.fc_layers().is_empty() {
            let channels = arch.conv_out_channels();
            let len = lengths[n_conv];
            let features = channels * len;
            let mut d = vec![T::zero(); upstream.len()];
            for c in 0..channels {
                for b in 0..batch {
                    d[(c * batch + b) * len..(c * batch + b + 1) * len]
                        .copy_from_slice(&upstream[b * features + c * len..b * features + (c + 1) * len]);
                }
            }
            relu_mask(&mut d, &cache.conv_out[n_conv - 1]);
            upstream = d;
        }

        for (l, spec) in arch.conv_layers().iter().enumerate().rev() {
            let lin = lengths[l];
            let lout = lengths[l + 1];
            let cols = batch * lout;
            let ck = spec.in_channels * spec.kernel;
            let input = if l == 0 { &cache.input[..] } else { &cache.conv_out[l - 1][..] };
            let slot = &self.slots()[l];
            let (gw, gb) = grads[slot.weight.start..slot.bias.end].split_at_mut(slot.weight.len());
            for (g, row) in gb.iter_mut().zip(upstream.chunks_exact(cols)) {
                *g = row.iter().copied().sum();
            }
            if spec.in_channels >= SHIFTED_MIN_CHANNELS {
                match conv_backward_shifted(spec, self.layer_weight(l), input, &upstream, batch, lin, gw, l > 0) {
                    Some(mut dx) => {
                        relu_mask(&mut dx, &cache.conv_out[l - 1]);
                        upstream = dx;
                        continue;
                    }
                    None => break,
                }
            }
            let col = im2col(spec, input, batch, lin);
            gemm(T::one(), Mat::row_major(&upstream, spec.out_channels, cols), Mat::transposed(&col, ck, cols), T::zero(), gw);
            if l == 0 {
                break;
            }
            let mut dcol = vec![T::zero(); ck * cols];
            gemm(
                T::one(),
                Mat::transposed(self.layer_weight(l), spec.out_channels, ck),
                Mat::row_major(&upstream, spec.out_channels, cols),
                T::zero(),
                &mut dcol,
            );
            let mut dx = vec![T::zero(); spec.in_channels * batch * lin];
            col2im_add(spec, &dcol, batch, lin, &mut dx);
            relu_mask(&mut dx, &cache.conv_out[l - 1]);
            upstream = dx;
        }
        Ok(grads)
    }

    /// Summed Gaussian NLL over a batch and the gradient of `scale * sum`.
    pub fn loss_and_gradient(&self, inputs: &[T], targets: &[TargetVector], scale: f64) -> Result<(f64, Vec<T>)> {
        let batch = targets.len();
        let cache = self.forward_batch(inputs, batch)?;
        let mut head_grad = vec![T::zero(); batch * OUTPUT_DIM];
        let mut total = 0.0;
        for (b, t) in targets.iter().enumerate() {
            let head = cache.head(b);
            let pred = Prediction::from_head(head)?;
            let (loss, g) = gaussian_nll_loss(&pred, t)?;
            total += loss;
            let out = &mut head_grad[b * OUTPUT_DIM..(b + 1) * OUTPUT_DIM];
            for j in 0..5 {
                out[j] = T::of(scale * g.mean[j]);
                let raw = head[5 + j].f64();
                // the clamp passes gradient only inside its range
                out[5 + j] = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) { T::of(scale * g.log_var[j]) } else { T::zero() };
            }
        }
        let grads = self.backward(&cache, &head_grad)?;
        Ok((total, grads))
    }
}
