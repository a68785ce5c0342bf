//! Parallel, deterministic training driver.
//!
//! Each step draws `batch_size` fresh examples whose stream indices depend
//! only on the step number, splits them into `micro_batch` chunks, computes
//! chunk gradients in parallel and sums them with a fixed pairwise tree. The
//! result is bitwise independent of the worker count.

use std::io::Write;

use rayon::prelude::*;

use odmr_core::nn::{adamw_step, gaussian_nll_loss, lr_schedule, ArchSpec, ModelWeights, Moments, TrainConfig, OUTPUT_DIM};
use odmr_core::rng::{child_seed, domain};
use odmr_core::synth::{generate_item, LabeledSpectrum, NoiseModel, PriorConfig};
use odmr_core::{Error, TargetVector};

use crate::error::Result;
use crate::infer::infer_batch;

/// Samples whose center error is below this count as successes.
pub const SUCCESS_THRESHOLD: f64 = 0.003;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub arch: ArchSpec,
    pub cfg: TrainConfig,
    pub prior: PriorConfig,
    pub noise: NoiseModel,
    pub val_size: usize,
    /// Log and validate every this many samples (rounded up to whole steps).
    pub log_every: u64,
}

impl TrainOptions {
    pub fn new(arch: ArchSpec, cfg: TrainConfig) -> Self {
        Self { arch, cfg, prior: PriorConfig::default(), noise: NoiseModel::default(), val_size: 2048, log_every: 500_000 }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub samples_seen: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_success_rate: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "samples_seen,lr,train_loss,val_loss,val_success_rate";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.samples_seen, self.lr, self.train_loss, self.val_loss, self.val_success_rate)
    }
}

/// A fixed validation set drawn from its own stream.
pub struct ValidationSet {
    inputs: Vec<f32>,
    targets: Vec<TargetVector>,
}

impl ValidationSet {
    pub fn generate(seed: u64, n: usize, prior: &PriorConfig, noise: NoiseModel) -> Result<Self> {
        let items = generate_items(child_seed(seed, domain::VALIDATION), 0, n, prior, noise)?;
        let (inputs, targets) = flatten(&items);
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Mean NLL and center success rate.
    pub fn evaluate(&self, w: &ModelWeights<f32>) -> Result<(f64, f64)> {
        if self.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let preds = infer_batch(w, &self.inputs)?;
        let mut loss = 0.0;
        let mut hits = 0usize;
        for (p, t) in preds.iter().zip(&self.targets) {
            loss += gaussian_nll_loss(p, t)?.0;
            if (p.mean.center - t.center).abs() < SUCCESS_THRESHOLD {
                hits += 1;
            }
        }
        let n = self.len() as f64;
        Ok((loss / n, hits as f64 / n))
    }
}

fn generate_items(seed: u64, first: u64, n: usize, prior: &PriorConfig, noise: NoiseModel) -> Result<Vec<LabeledSpectrum>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_item(seed, first + i, prior, noise))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Into::into)
}

fn flatten(items: &[LabeledSpectrum]) -> (Vec<f32>, Vec<TargetVector>) {
    let inputs = items.iter().flat_map(|l| l.normalized.values.iter().map(|&v| v as f32)).collect();
    let targets = items.iter().map(LabeledSpectrum::target).collect();
    (inputs, targets)
}

/// Sums vectors pairwise in a fixed tree shape: `((v0+v1)+(v2+v3))+...`.
pub fn tree_sum(mut parts: Vec<Vec<f32>>) -> Vec<f32> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Loss sum and gradient of the mean loss for one batch.
pub fn batch_gradient(w: &ModelWeights<f32>, inputs: &[f32], targets: &[TargetVector], micro: usize) -> Result<(f64, Vec<f32>)> {
    let len = w.arch().input_length();
    let scale = 1.0 / targets.len() as f64;
    let parts: Vec<(f64, Vec<f32>)> = targets
        .par_chunks(micro)
        .zip(inputs.par_chunks(micro * len))
        .map(|(t, x)| w.loss_and_gradient(x, t, scale))
        .collect::<std::result::Result<_, _>>()?;
    let loss = parts.iter().map(|p| p.0).sum();
    Ok((loss, tree_sum(parts.into_iter().map(|p| p.1).collect())))
}

/// Runs (or resumes) training. `start` defaults to a fresh He initialization;
/// a resumed checkpoint continues from its stored step and optimizer state.
/// Every log row is passed to `on_log` as soon as it is produced.
pub fn train(
    opts: &TrainOptions,
    start: Option<ModelWeights<f32>>,
    mut on_log: impl FnMut(&LogRow, &ModelWeights<f32>) -> Result<()>,
) -> Result<ModelWeights<f32>> {
    let cfg = opts.cfg.validated()?;
    let mut w = match start {
        Some(w) => {
            if w.arch() != &opts.arch {
                return Err(Error::Arch("resumed checkpoint has a different architecture".into()).into());
            }
            w
        }
        None => ModelWeights::init(opts.arch.clone(), child_seed(cfg.seed, domain::INIT)),
    };
    if w.arch().output_dim() != OUTPUT_DIM {
        return Err(Error::Arch(format!("regressor needs {OUTPUT_DIM} outputs")).into());
    }
    if w.moments.is_none() {
        w.moments = Some(Moments::zeros(w.len()));
    }
    let total = cfg.total_steps();
    let batch = cfg.batch_size;
    let data_seed = child_seed(cfg.seed, domain::SYNTH);
    let val = ValidationSet::generate(cfg.seed, opts.val_size, &opts.prior, opts.noise)?;
    let log_steps = opts.log_every.div_ceil(batch as u64).max(1);

    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    while w.step < total {
        let step = w.step;
        let lr = lr_schedule(step, total, &cfg)?;
        let items = generate_items(data_seed, step * batch as u64, batch, &opts.prior, opts.noise)?;
        let (inputs, targets) = flatten(&items);
        let (loss, grads) = batch_gradient(&w, &inputs, &targets, cfg.micro_batch)?;
        let mean_loss = loss / batch as f64;
        if !mean_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, lr, loss: mean_loss }.into());
        }
        adamw_step(&mut w, &grads, &cfg, lr)?;
        window_loss += loss;
        window_n += batch;
        if w.step % log_steps == 0 || w.step == total {
            let (val_loss, val_success_rate) = val.evaluate(&w)?;
            let row = LogRow {
                samples_seen: w.step * batch as u64,
                lr,
                train_loss: window_loss / window_n as f64,
                val_loss,
                val_success_rate,
            };
            on_log(&row, &w)?;
            window_loss = 0.0;
            window_n = 0;
        }
    }
    Ok(w)
}

/// Appends log rows to a CSV file, writing the header for new files.
pub struct LogWriter {
    file: std::fs::File,
}

impl LogWriter {
    pub fn open(path: &std::path::Path, append: bool) -> Result<Self> {
        let exists = append && path.exists() && std::fs::metadata(path)?.len() > 0;
        let mut file = std::fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(path)?;
        if !exists {
            writeln!(file, "{}", LogRow::HEADER)?;
        }
        Ok(Self { file })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_shape() {
        let v = tree_sum(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]]);
        assert_eq!(v, vec![15.0]);
        assert!(tree_sum(vec![]).is_empty());
    }
}
