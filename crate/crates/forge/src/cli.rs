//! Command-line interface.
//!
//! Every subcommand accepts `--config file.json`; flags override file values
//! and the fully resolved settings are written as `resolved_config.json`
//! next to the outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use odmr_core::fitter::{FitConfig, FitResult};
use odmr_core::nn::arch::{DESK_CONV, DESK_HIDDEN};
use odmr_core::nn::{ArchSpec, ModelWeights, TrainConfig, OUTPUT_DIM};
use odmr_core::physics::PhysicsConstants;
use odmr_core::rng::{child_seed, domain};
use odmr_core::spectrum::{zscore, FrequencyGrid, Spectrum};
use odmr_core::synth::{generate_item, NoiseModel, PriorConfig};
use odmr_core::widefield::{field_map, temperature_map};
use odmr_core::INPUT_LENGTH;

use crate::bench::{
    calibration_report, emit_reports, evaluate_method, fixed_init, make_snr_bins, timing_harness, BenchConfig, BenchMethod, MethodContext,
    DEFAULT_SNR_GRID,
};
use crate::config::{merge, write_resolved};
use crate::error::{ForgeError, Result};
use crate::formats::spectra::{lift_normalized, read_spectra, SpectraInput};
use crate::formats::{checkpoint, cube, dataset};
use crate::infer::infer_batch;
use crate::simulate::VortexSpec;
use crate::train::{train, LogWriter, TrainOptions};
use crate::widefield::{
    extract_map, histogram_csv, load_param_map, load_scalar_map, param_channel, parse_method, render_map, save_param_map, save_scalar_map,
    ExtractConfig,
};

#[derive(Debug, Parser)]
#[command(name = "odmr-forge", version, about = "ODMR spectral inference: synthesis, training, fitting, benchmarks and maps")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ODMR_FORGE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (ODMRSYN1 or CSV).
    Synth(SynthArgs),
    /// Train the regressor on on-the-fly synthetic data.
    Train(TrainArgs),
    /// Predict line-shape parameters with a trained network.
    Infer(InferArgs),
    /// Least-squares fits of spectra.
    Fit(FitArgs),
    /// Success-rate, RMSE, calibration and timing benchmarks.
    Bench(BenchArgs),
    /// Widefield maps.
    #[command(subcommand)]
    Map(MapCommand),
    /// Print the program and checkpoint-format versions.
    Version,
}

#[derive(Debug, Subcommand)]
pub enum MapCommand {
    /// Per-pixel parameter extraction from an ODMRCUBE file.
    Extract(MapExtractArgs),
    /// Axial field from a splitting map and a zero-field baseline map.
    Field(MapFieldArgs),
    /// Temperature map and center-frequency spread.
    Temp(MapTempArgs),
    /// PGM and SVG images of a map.
    Render(MapRenderArgs),
    /// Synthetic vortex cubes with known field.
    Simulate(MapSimulateArgs),
}

fn parse_pair(p: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = p.split_once(':').ok_or_else(|| format!("expected channels:kernel, got {p:?}"))?;
    Ok((a.trim().parse().map_err(|e| format!("{p:?}: {e}"))?, b.trim().parse().map_err(|e| format!("{p:?}: {e}"))?))
}

fn usage(msg: impl Into<String>) -> ForgeError {
    ForgeError::Usage(msg.into())
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| usage(format!("missing --{flag}")))
}

#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    command: &'a str,
    threads: usize,
    #[serde(flatten)]
    args: &'a T,
}

fn resolve<T: Serialize>(dir: &Path, command: &str, threads: usize, args: &T) -> Result<()> {
    write_resolved(dir, &Resolved { command, threads, args })
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn noise_model(name: &str) -> Result<NoiseModel> {
    match name {
        "hybrid" => Ok(NoiseModel::Hybrid),
        "exact" => Ok(NoiseModel::Exact),
        _ => Err(usage(format!("unknown noise model {name:?} (hybrid|exact)"))),
    }
}

fn fit_config(restarts: usize, max_iterations: usize) -> Result<FitConfig> {
    Ok(FitConfig { mc_restarts: restarts, max_iterations, ..FitConfig::default() }.validated()?)
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output file; `.csv` writes CSV, anything else ODMRSYN1.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stream index of the first spectrum.
    #[arg(long)]
    pub first_index: Option<u64>,
    /// Shot-noise sampler: hybrid or exact.
    #[arg(long)]
    pub noise: Option<String>,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self { config: None, out: None, n: None, seed: None, first_index: None, noise: None }
    }
}

fn run_synth(args: &SynthArgs, threads: usize) -> Result<()> {
    let mut a: SynthArgs = merge(args, args.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let n = *a.n.get_or_insert(1024);
    let seed = *a.seed.get_or_insert(0);
    let first = *a.first_index.get_or_insert(0);
    let noise = noise_model(a.noise.get_or_insert_with(|| "hybrid".into()))?;
    let prior = PriorConfig::default();
    let data_seed = child_seed(seed, domain::SYNTH);
    let records: Vec<dataset::Record> = (0..n as u64)
        .into_par_iter()
        .map(|i| generate_item(data_seed, first + i, &prior, noise).map(|l| dataset::Record::from(&l)))
        .collect::<std::result::Result<_, _>>()?;
    resolve(&parent_dir(&out), "synth", threads, &a)?;
    if out.extension().is_some_and(|e| e == "csv") {
        dataset::save_csv(&records, &out)?;
    } else {
        dataset::save(&records, &out)?;
    }
    println!("{}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint, log and resolved config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Resume from a checkpoint carrying optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Convolution layers as `channels:kernel,...`.
    #[arg(long, value_parser = parse_pair, value_delimiter = ',')]
    pub conv: Option<Vec<(usize, usize)>>,
    /// Hidden dense widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub total_samples: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Samples per gradient work item (fixes the reduction order).
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Set the peak rate by the linear batch-size rule.
    #[arg(long)]
    pub linear_lr_scaling: bool,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation spectra evaluated at each log point.
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Samples between log rows and checkpoint saves.
    #[arg(long)]
    pub log_every: Option<u64>,
}

impl Default for TrainArgs {
    fn default() -> Self {
        Self {
            config: None,
            out_dir: None,
            resume: None,
            conv: None,
            hidden: None,
            total_samples: None,
            batch_size: None,
            micro_batch: None,
            lr_max: None,
            lr_min: None,
            linear_lr_scaling: false,
            warmup_frac: None,
            weight_decay: None,
            seed: None,
            val_size: None,
            log_every: None,
        }
    }
}

fn run_train(args: &TrainArgs, threads: usize) -> Result<()> {
    let mut a: TrainArgs = merge(args, args.config.as_deref())?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        batch_size: *a.batch_size.get_or_insert(d.batch_size),
        total_samples: *a.total_samples.get_or_insert(d.total_samples),
        eta_max: *a.lr_max.get_or_insert(d.eta_max),
        eta_min: *a.lr_min.get_or_insert(d.eta_min),
        warmup_frac: *a.warmup_frac.get_or_insert(d.warmup_frac),
        weight_decay: *a.weight_decay.get_or_insert(d.weight_decay),
        seed: *a.seed.get_or_insert(d.seed),
        micro_batch: *a.micro_batch.get_or_insert(d.micro_batch),
        ..d
    };
    if a.linear_lr_scaling {
        cfg = cfg.with_linear_lr_scaling();
        a.lr_max = Some(cfg.eta_max);
    }
    let cfg = cfg.validated()?;
    let conv = a.conv.get_or_insert_with(|| DESK_CONV.to_vec()).clone();
    let hidden = a.hidden.get_or_insert_with(|| DESK_HIDDEN.to_vec()).clone();
    let arch = ArchSpec::from_widths(INPUT_LENGTH, &conv, &hidden, OUTPUT_DIM)?;
    let mut opts = TrainOptions::new(arch, cfg);
    opts.val_size = *a.val_size.get_or_insert(opts.val_size);
    opts.log_every = *a.log_every.get_or_insert(opts.log_every);
    resolve(&out_dir, "train", threads, &a)?;

    let start = a.resume.as_deref().map(checkpoint::load).transpose()?;
    let ckpt_path = out_dir.join("model.nvcnn");
    let mut log = LogWriter::open(&out_dir.join("train_log.csv"), start.is_some())?;
    let w = train(&opts, start, |row, w| {
        log.write(row)?;
        eprintln!(
            "samples {:>10}  lr {:.3e}  train {:+.4}  val {:+.4}  success {:.4}",
            row.samples_seen, row.lr, row.train_loss, row.val_loss, row.val_success_rate
        );
        save_atomic(w, &ckpt_path)
    })?;
    save_atomic(&w, &ckpt_path)?;
    println!("{}", ckpt_path.display());
    Ok(())
}

fn save_atomic(w: &ModelWeights<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    checkpoint::save(w, &tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// infer

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// ODMRSYN1, dataset CSV, or plain CSV of counts (one spectrum per row).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prediction CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for InferArgs {
    fn default() -> Self {
        Self { config: None, checkpoint: None, input: None, out: None }
    }
}

fn normalized_inputs(input: &SpectraInput) -> Result<Vec<f32>> {
    let rows: Vec<Vec<f64>> = match input {
        SpectraInput::Normalized(v) => v.clone(),
        SpectraInput::Counts(v) => v.iter().map(|r| zscore(r).map(|z| z.values)).collect::<std::result::Result<_, _>>()?,
    };
    Ok(rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect())
}

fn run_infer(args: &InferArgs, threads: usize) -> Result<()> {
    let a: InferArgs = merge(args, args.config.as_deref())?;
    let (ckpt, input, out) = (required(&a.checkpoint, "checkpoint")?, required(&a.input, "input")?, required(&a.out, "out")?);
    let w = checkpoint::load(&ckpt)?;
    let spectra = read_spectra(&input)?;
    let preds = infer_batch(&w, &normalized_inputs(&spectra)?)?;
    resolve(&parent_dir(&out), "infer", threads, &a)?;
    let mut wr = csv::Writer::from_path(&out)?;
    wr.write_record(["index", "center", "splitting", "w1", "w2", "rho", "sd_center", "sd_splitting", "sd_w1", "sd_w2", "sd_rho"])?;
    for (i, p) in preds.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.mean.to_array().iter().chain(&p.sigma()).map(|v| v.to_string()));
        wr.write_record(rec)?;
    }
    wr.flush()?;
    println!("{}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// mc, single or hybrid.
    #[arg(long)]
    pub method: Option<String>,
    /// Needed for the hybrid method.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Monte-Carlo restarts.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Center of the fixed start for the single method.
    #[arg(long)]
    pub init_center: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Default for FitArgs {
    fn default() -> Self {
        Self {
            config: None,
            input: None,
            out: None,
            method: None,
            checkpoint: None,
            restarts: None,
            max_iterations: None,
            init_center: None,
            seed: None,
        }
    }
}

fn run_fit(args: &FitArgs, threads: usize) -> Result<()> {
    let mut a: FitArgs = merge(args, args.config.as_deref())?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let method = a.method.get_or_insert_with(|| "mc".into()).clone();
    let d = FitConfig::default();
    let cfg = fit_config(*a.restarts.get_or_insert(d.mc_restarts), *a.max_iterations.get_or_insert(d.max_iterations))?;
    let init_center = *a.init_center.get_or_insert(0.5);
    let seed = *a.seed.get_or_insert(0);
    let spectra = read_spectra(&input)?;
    let model = match method.as_str() {
        "hybrid" => Some(checkpoint::load(&required(&a.checkpoint, "checkpoint")?)?),
        "mc" | "single" => None,
        m => return Err(usage(format!("unknown fit method {m:?} (mc|single|hybrid)"))),
    };
    let preds = match &model {
        Some(w) => Some(infer_batch(w, &normalized_inputs(&spectra)?)?),
        None => None,
    };
    let rows: Vec<Vec<f64>> = match &spectra {
        SpectraInput::Normalized(v) => v.iter().map(|z| lift_normalized(z)).collect(),
        SpectraInput::Counts(v) => v.clone(),
    };
    let prior = PriorConfig::default();
    let mc_seed = child_seed(seed, domain::MC_FIT);
    let results: Vec<(Result<FitResult>, f64)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let t = Instant::now();
            let res = (|| -> Result<FitResult> {
                let s = Spectrum::new(FrequencyGrid::normalized(r.len())?, r.clone())?.mean_normalized()?;
                Ok(match (method.as_str(), &preds) {
                    ("hybrid", Some(p)) => odmr_core::fitter::hybrid_fit_from_prediction(&p[i], &s, &cfg)?,
                    ("single", _) => odmr_core::fitter::lm_fit(&s, &fixed_init(init_center), &cfg)?,
                    _ => odmr_core::fitter::mc_fit(&s, mc_seed.wrapping_add(i as u64), &cfg, &prior)?,
                })
            })();
            (res, t.elapsed().as_secs_f64() * 1e6)
        })
        .collect();
    resolve(&parent_dir(&out), "fit", threads, &a)?;
    let mut wr = csv::Writer::from_path(&out)?;
    wr.write_record([
        "index", "b", "x1", "x2", "w1", "w2", "c1", "c2", "center", "splitting", "mse", "iterations", "converged", "stop", "restart_index",
        "wall_time_us", "error",
    ])?;
    for (i, (r, us)) in results.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        match r {
            Ok(f) => {
                let p = f.params;
                rec.extend([p.b, p.x1, p.x2, p.w1, p.w2, p.c1, p.c2, p.center(), p.splitting(), f.mse].map(|v| v.to_string()));
                rec.extend([f.iterations.to_string(), u8::from(f.converged).to_string(), format!("{:?}", f.stop), f.restart_index.to_string()]);
                rec.extend([format!("{us:.1}"), String::new()]);
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 14));
                rec.extend([format!("{us:.1}"), e.to_string()]);
            }
        }
        wr.write_record(rec)?;
    }
    wr.flush()?;
    println!("{}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of cnn, hybrid, mc, single.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub snr_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub n_per_bin: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Monte-Carlo restarts.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Center of the fixed start for the single method.
    #[arg(long)]
    pub init_center: Option<f64>,
    /// Spectra in the timing comparison (0 skips it).
    #[arg(long)]
    pub timing_n: Option<usize>,
    #[arg(long)]
    pub timing_runs: Option<usize>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            config: None,
            methods: None,
            snr_grid: None,
            n_per_bin: None,
            threshold: None,
            checkpoint: None,
            seed: None,
            out_dir: None,
            restarts: None,
            init_center: None,
            timing_n: None,
            timing_runs: None,
        }
    }
}

fn run_bench(args: &BenchArgs, threads: usize) -> Result<()> {
    let mut a: BenchArgs = merge(args, args.config.as_deref())?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let methods: Vec<BenchMethod> = a
        .methods
        .get_or_insert_with(|| vec!["cnn".into(), "hybrid".into(), "mc".into()])
        .iter()
        .map(|m| BenchMethod::parse(m).ok_or_else(|| usage(format!("unknown method {m:?}"))))
        .collect::<Result<_>>()?;
    let cfg = BenchConfig {
        snr_grid: a.snr_grid.get_or_insert_with(|| DEFAULT_SNR_GRID.to_vec()).clone(),
        n_per_bin: *a.n_per_bin.get_or_insert(1024),
        success_threshold: *a.threshold.get_or_insert(0.003),
        seed: *a.seed.get_or_insert(0),
    }
    .validated()?;
    let fit = fit_config(*a.restarts.get_or_insert(FitConfig::default().mc_restarts), FitConfig::default().max_iterations)?;
    let single_init_center = *a.init_center.get_or_insert(0.5);
    let timing_n = *a.timing_n.get_or_insert(0);
    let timing_runs = *a.timing_runs.get_or_insert(3);
    let weights = if methods.iter().any(|m| m.needs_model()) {
        Some(checkpoint::load(&required(&a.checkpoint, "checkpoint")?)?)
    } else {
        None
    };
    resolve(&out_dir, "bench", threads, &a)?;

    let prior = PriorConfig::default();
    let bins = make_snr_bins(&cfg, &prior, NoiseModel::Hybrid)?;
    let ctx = MethodContext { weights: weights.as_ref(), fit: &fit, prior: &prior, seed: cfg.seed, single_init_center };
    let mut reports = Vec::new();
    for &m in &methods {
        let r = evaluate_method(m, &ctx, &bins, cfg.success_threshold)?;
        for b in &r.bins {
            eprintln!("{:>7} snr {:>5}  success {:.4}  rmse {:.3e}  {:.2}s", r.method, b.target_snr, b.success_rate, b.rmse, b.wall_time_s);
        }
        reports.push(r);
    }
    let calibration = match (&weights, methods.contains(&BenchMethod::Cnn)) {
        (Some(w), true) => {
            let items: Vec<_> = bins.iter().flat_map(|b| b.items.iter()).collect();
            let inputs: Vec<f32> = items.iter().flat_map(|l| l.normalized.values.iter().map(|&v| v as f32)).collect();
            let truths: Vec<_> = items.iter().map(|l| l.target()).collect();
            Some(calibration_report(&infer_batch(w, &inputs)?, &truths)?)
        }
        _ => None,
    };
    let timing = if timing_n > 0 {
        let tcfg = BenchConfig { snr_grid: vec![cfg.snr_grid[cfg.snr_grid.len() / 2]], n_per_bin: timing_n, ..cfg.clone() };
        let items = make_snr_bins(&tcfg, &prior, NoiseModel::Hybrid)?.remove(0).items;
        timing_harness(&methods, &ctx, &items, timing_runs)?
    } else {
        Vec::new()
    };
    for p in emit_reports(&reports, calibration.as_ref(), &timing, &out_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// map

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapExtractArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// cnn, hybrid, mc or single.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub snr_min: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Center of the fixed start for the single method.
    #[arg(long)]
    pub init_center: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes `params.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Default for MapExtractArgs {
    fn default() -> Self {
        Self {
            config: None,
            cube: None,
            method: None,
            checkpoint: None,
            snr_min: None,
            restarts: None,
            init_center: None,
            seed: None,
            out_dir: None,
        }
    }
}

fn run_map_extract(args: &MapExtractArgs, threads: usize) -> Result<()> {
    let mut a: MapExtractArgs = merge(args, args.config.as_deref())?;
    let (cube_path, out_dir) = (required(&a.cube, "cube")?, required(&a.out_dir, "out-dir")?);
    let method_name = a.method.get_or_insert_with(|| "cnn".into()).clone();
    let method = parse_method(&method_name).ok_or_else(|| usage(format!("unknown method {method_name:?}")))?;
    let cfg = ExtractConfig {
        method,
        snr_min: *a.snr_min.get_or_insert(5.0),
        fit: fit_config(*a.restarts.get_or_insert(FitConfig::default().mc_restarts), FitConfig::default().max_iterations)?,
        prior: PriorConfig::default(),
        seed: *a.seed.get_or_insert(0),
        single_init_center: *a.init_center.get_or_insert(0.5),
    };
    let weights = a.checkpoint.as_deref().map(checkpoint::load).transpose()?;
    let cube = cube::load(&cube_path)?;
    resolve(&out_dir, "map extract", threads, &a)?;
    let t = Instant::now();
    let map = extract_map(&cube, weights.as_ref(), &cfg)?;
    eprintln!("{} of {} pixels valid, {:.2}s", map.valid_count(), map.pixels.len(), t.elapsed().as_secs_f64());
    let p = out_dir.join("params.csv");
    save_param_map(&map, &p)?;
    println!("{}", p.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapFieldArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Parameter map of the measurement.
    #[arg(long)]
    pub delta: Option<PathBuf>,
    /// Parameter map at zero field.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// MHz/G.
    #[arg(long)]
    pub gamma_e: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Default for MapFieldArgs {
    fn default() -> Self {
        Self { config: None, delta: None, baseline: None, gamma_e: None, out_dir: None }
    }
}

fn run_map_field(args: &MapFieldArgs, threads: usize) -> Result<()> {
    let mut a: MapFieldArgs = merge(args, args.config.as_deref())?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let k = PhysicsConstants { gamma_e: *a.gamma_e.get_or_insert(PhysicsConstants::default().gamma_e), ..Default::default() }.validated()?;
    let delta = load_param_map(&required(&a.delta, "delta")?)?;
    let base = load_param_map(&required(&a.baseline, "baseline")?)?;
    resolve(&out_dir, "map field", threads, &a)?;
    let f = field_map(&delta, &base, &k)?;
    let p = out_dir.join("field.csv");
    save_scalar_map(&f, &p)?;
    render_map(&f, &out_dir.join("field"), "Axial field", "G")?;
    println!("{}", p.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapTempArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Parameter map with center frequencies.
    #[arg(long)]
    pub centers: Option<PathBuf>,
    /// Reference center frequency, GHz.
    #[arg(long)]
    pub d_ref: Option<f64>,
    /// Temperature at the reference, °C.
    #[arg(long)]
    pub t_ref: Option<f64>,
    /// kHz/°C.
    #[arg(long)]
    pub dd_dt: Option<f64>,
    /// Histogram bins for the center spread.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Default for MapTempArgs {
    fn default() -> Self {
        Self { config: None, centers: None, d_ref: None, t_ref: None, dd_dt: None, bins: None, out_dir: None }
    }
}

fn run_map_temp(args: &MapTempArgs, threads: usize) -> Result<()> {
    let mut a: MapTempArgs = merge(args, args.config.as_deref())?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let d = PhysicsConstants::default();
    let k = PhysicsConstants { dd_dt: *a.dd_dt.get_or_insert(d.dd_dt), ..d }.validated()?;
    let d_ref = *a.d_ref.get_or_insert(d.d_gs);
    let t_ref = *a.t_ref.get_or_insert(25.0);
    let bins = *a.bins.get_or_insert(40);
    let centers = load_param_map(&required(&a.centers, "centers")?)?;
    resolve(&out_dir, "map temp", threads, &a)?;
    let (t, spread) = temperature_map(&centers, d_ref, t_ref, &k, bins)?;
    let p = out_dir.join("temperature.csv");
    save_scalar_map(&t, &p)?;
    render_map(&t, &out_dir.join("temperature"), "Temperature", "°C")?;
    if let Some(s) = spread {
        std::fs::write(out_dir.join("center_histogram.csv"), histogram_csv(&s.histogram))?;
        let mut f = std::fs::File::create(out_dir.join("center_spread.csv"))?;
        writeln!(f, "fwhm_mhz,half_width_c,mean_mhz,sigma_mhz")?;
        writeln!(f, "{},{},{},{}", s.fwhm_mhz, s.half_width_c, s.fit.mean, s.fit.sigma)?;
        eprintln!("center FWHM {:.4} MHz -> ±{:.3} °C", s.fwhm_mhz, s.half_width_c);
    }
    println!("{}", p.display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapRenderArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Scalar map CSV or parameter map.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Parameter to draw from a parameter map: center, splitting, w1, w2, rho, snr.
    #[arg(long)]
    pub param: Option<String>,
    /// Output path stem; `.pgm` and `.svg` are appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub unit: Option<String>,
}

impl Default for MapRenderArgs {
    fn default() -> Self {
        Self { config: None, map: None, param: None, out: None, title: None, unit: None }
    }
}

fn run_map_render(args: &MapRenderArgs, threads: usize) -> Result<()> {
    let mut a: MapRenderArgs = merge(args, args.config.as_deref())?;
    let (path, out) = (required(&a.map, "map")?, required(&a.out, "out")?);
    let first_line = std::fs::read_to_string(&path)?.lines().next().unwrap_or("").to_string();
    let map = if first_line.starts_with("# odmr-param-map") {
        let name = a.param.get_or_insert_with(|| "center".into()).clone();
        param_channel(&load_param_map(&path)?, &name)?
    } else {
        load_scalar_map(&path)?
    };
    let title = a.title.get_or_insert_with(|| path.file_stem().map_or("map".into(), |s| s.to_string_lossy().into_owned())).clone();
    let unit = a.unit.get_or_insert_with(String::new).clone();
    resolve(&parent_dir(&out), "map render", threads, &a)?;
    render_map(&map, &out, &title, &unit)?;
    println!("{}", out.with_extension("svg").display());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Per-pixel SNR of the deeper dip.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Store noiseless expectations instead of Poisson counts.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Default for MapSimulateArgs {
    fn default() -> Self {
        Self { config: None, height: None, width: None, snr: None, noiseless: false, seed: None, out_dir: None }
    }
}

fn run_map_simulate(args: &MapSimulateArgs, threads: usize) -> Result<()> {
    let mut a: MapSimulateArgs = merge(args, args.config.as_deref())?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let spec = VortexSpec::sized(*a.height.get_or_insert(64), *a.width.get_or_insert(64));
    let snr = *a.snr.get_or_insert(20.0);
    let seed = *a.seed.get_or_insert(0);
    let noise = (!a.noiseless).then_some((seed, NoiseModel::Hybrid));
    resolve(&out_dir, "map simulate", threads, &a)?;
    let (c, base, b) = spec.cubes(snr, noise, &PhysicsConstants::default())?;
    cube::save(&c, &out_dir.join("cube.odmrcube"))?;
    cube::save(&base, &out_dir.join("baseline.odmrcube"))?;
    let truth = odmr_core::widefield::ScalarMap::new(spec.height, spec.width, b, vec![None; spec.height * spec.width])?;
    save_scalar_map(&truth, &out_dir.join("true_field.csv"))?;
    println!("{}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------

/// Runs a parsed command line inside a pool of `threads` workers.
pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(usage("--threads must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ForgeError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => run_synth(a, threads),
        Command::Train(a) => run_train(a, threads),
        Command::Infer(a) => run_infer(a, threads),
        Command::Fit(a) => run_fit(a, threads),
        Command::Bench(a) => run_bench(a, threads),
        Command::Map(MapCommand::Extract(a)) => run_map_extract(a, threads),
        Command::Map(MapCommand::Field(a)) => run_map_field(a, threads),
        Command::Map(MapCommand::Temp(a)) => run_map_temp(a, threads),
        Command::Map(MapCommand::Render(a)) => run_map_render(a, threads),
        Command::Map(MapCommand::Simulate(a)) => run_map_simulate(a, threads),
        Command::Version => {
            println!("odmr-forge {} (checkpoint format NVCNN1 v{})", env!("CARGO_PKG_VERSION"), checkpoint::VERSION);
            Ok(())
        }
    })
}
