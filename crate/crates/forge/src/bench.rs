//! Evaluation protocols: success rate and RMSE against SNR, uncertainty
//! calibration and wall-clock comparisons.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use odmr_core::fitter::{FitConfig, FitModelParams};
use odmr_core::nn::{ModelWeights, Prediction};
use odmr_core::rng::{child_seed, domain, stream};
use odmr_core::spectrum::{FrequencyGrid, Spectrum};
use odmr_core::stats::{self, calibration, loglog_slope, wilson_interval, Calibration};
use odmr_core::synth::{render_example, sample_params, LabeledSpectrum, NoiseModel, PriorConfig};
use odmr_core::{Error, TargetVector};

use crate::error::{ForgeError, Result};
use crate::infer::{fit_batch, hybrid_batch, infer_batch, FitMethod};
use crate::svg::{histogram_svg, LinePlot, Series};

pub const DEFAULT_SNR_GRID: [f64; 9] = [2.0, 3.5, 5.0, 7.0, 10.0, 14.0, 20.0, 30.0, 45.0];
/// Upper photon budget per point considered achievable.
pub const MAX_PHOTONS_PER_POINT: f64 = 1e10;
/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub snr_grid: Vec<f64>,
    pub n_per_bin: usize,
    pub success_threshold: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { snr_grid: DEFAULT_SNR_GRID.to_vec(), n_per_bin: 1024, success_threshold: 0.003, seed: 0 }
    }
}

impl BenchConfig {
    pub fn validated(self) -> Result<Self> {
        if self.snr_grid.is_empty() {
            return Err(Error::Domain("SNR grid is empty".into()).into());
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::Domain(format!("success threshold must be positive, got {}", self.success_threshold)).into());
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct SnrBin {
    pub target_snr: f64,
    pub items: Vec<LabeledSpectrum>,
}

/// Evaluation sets at fixed SNR: line shapes come from the prior, and the
/// photon budget is solved so that `max(c1, c2) sqrt(photons / n) = target`.
pub fn make_snr_bins(cfg: &BenchConfig, prior: &PriorConfig, noise: NoiseModel) -> Result<Vec<SnrBin>> {
    let grid = FrequencyGrid::standard();
    let n = grid.len() as f64;
    let c_max = prior.contrast_range[1];
    cfg.snr_grid
        .iter()
        .enumerate()
        .map(|(b, &target)| {
            if !(target > 0.0) || !target.is_finite() || (target / c_max).powi(2) > MAX_PHOTONS_PER_POINT {
                return Err(Error::Domain(format!("target SNR {target} outside the achievable range")).into());
            }
            let bin_seed = child_seed(child_seed(cfg.seed, domain::BENCH), b as u64);
            let items = (0..cfg.n_per_bin as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(bin_seed, domain::BENCH, i);
                    let truth = sample_params(&mut rng, prior);
                    let c = truth.c1.max(truth.c2);
                    let photons = n * (target / c).powi(2);
                    render_example(&mut rng, truth, photons, &grid, noise)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(SnrBin { target_snr: target, items })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Mc,
    Cnn,
    Hybrid,
    /// One LM run from a fixed initialization (see [`fixed_init`]).
    Single,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mc => "mc",
            Self::Cnn => "cnn",
            Self::Hybrid => "hybrid",
            Self::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mc" | "mc_fit" => Some(Self::Mc),
            "cnn" => Some(Self::Cnn),
            "hybrid" => Some(Self::Hybrid),
            "single" => Some(Self::Single),
            _ => None,
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Self::Cnn | Self::Hybrid)
    }
}

/// Fixed global start for single fits: symmetric dips around `center` with
/// mid-prior splitting, width and contrast.
pub fn fixed_init(center: f64) -> FitModelParams {
    FitModelParams { b: 1.0, x1: center - 0.055, x2: center + 0.055, w1: 0.055, w2: 0.055, c1: 0.08, c2: 0.08 }
}

/// Everything a method needs besides the spectra.
#[derive(Debug, Clone, Copy)]
pub struct MethodContext<'a> {
    pub weights: Option<&'a ModelWeights<f32>>,
    pub fit: &'a FitConfig,
    pub prior: &'a PriorConfig,
    pub seed: u64,
    pub single_init_center: f64,
}

/// Estimated centers for a set of spectra; failures give `NaN`.
pub fn estimate_centers(method: BenchMethod, ctx: &MethodContext, items: &[LabeledSpectrum], offset: u64) -> Result<Vec<f64>> {
    let spectra = || items.iter().map(|l| l.raw.clone()).collect::<Vec<Spectrum>>();
    let model = || ctx.weights.ok_or_else(|| ForgeError::Usage(format!("method {} needs a checkpoint", method.name())));
    let centers = match method {
        BenchMethod::Cnn => {
            let inputs: Vec<f32> = items.iter().flat_map(|l| l.normalized.values.iter().map(|&v| v as f32)).collect();
            infer_batch(model()?, &inputs)?.iter().map(|p| p.mean.center).collect()
        }
        BenchMethod::Hybrid => hybrid_batch(model()?, &spectra(), ctx.fit)?.into_iter().map(fit_center).collect(),
        BenchMethod::Mc => {
            let seed = child_seed(ctx.seed, domain::MC_FIT).wrapping_add(offset);
            fit_batch(&spectra(), FitMethod::Mc { seed }, ctx.fit, ctx.prior).into_iter().map(fit_center).collect()
        }
        BenchMethod::Single => fit_batch(&spectra(), FitMethod::Fixed(fixed_init(ctx.single_init_center)), ctx.fit, ctx.prior)
            .into_iter()
            .map(fit_center)
            .collect(),
    };
    Ok(centers)
}

fn fit_center(r: Result<odmr_core::FitResult>) -> f64 {
    r.map_or(f64::NAN, |f| f.params.center())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub target_snr: f64,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Over finite errors only.
    pub rmse: f64,
    pub mean_error: f64,
    pub max_abs_error: f64,
    /// Spectra whose extraction failed (non-finite error).
    pub failures: usize,
    pub wall_time_s: f64,
    /// Signed center errors, estimate minus truth.
    #[serde(skip)]
    pub errors: Vec<f64>,
}

impl BinReport {
    pub fn from_errors(target_snr: f64, errors: Vec<f64>, threshold: f64, wall_time_s: f64) -> Self {
        let n = errors.len();
        let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
        let successes = errors.iter().filter(|e| e.abs() < threshold).count();
        let (ci_low, ci_high) = wilson_interval(successes, n, Z95);
        let nan_if_empty = |v: f64| if finite.is_empty() { f64::NAN } else { v };
        Self {
            target_snr,
            n,
            successes,
            success_rate: if n == 0 { f64::NAN } else { successes as f64 / n as f64 },
            ci_low,
            ci_high,
            rmse: nan_if_empty(stats::rms(&finite)),
            mean_error: nan_if_empty(stats::mean(&finite)),
            max_abs_error: nan_if_empty(finite.iter().fold(0.0, |m, e| m.max(e.abs()))),
            failures: n - finite.len(),
            wall_time_s,
            errors,
        }
    }

    /// Success rate at another threshold, from the stored errors.
    pub fn success_rate_at(&self, threshold: f64) -> f64 {
        stats::success_rate(&self.errors, threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub bins: Vec<BinReport>,
    pub total_wall_s: f64,
    pub threads: usize,
}

impl MethodReport {
    pub fn bin(&self, snr: f64) -> Option<&BinReport> {
        self.bins.iter().find(|b| b.target_snr == snr)
    }

    /// Log-log slope of RMSE against SNR over bins with `lo <= snr <= hi`.
    pub fn rmse_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let sel: Vec<&BinReport> = self.bins.iter().filter(|b| b.target_snr >= lo && b.target_snr <= hi).collect();
        let x: Vec<f64> = sel.iter().map(|b| b.target_snr).collect();
        let y: Vec<f64> = sel.iter().map(|b| b.rmse).collect();
        Ok(loglog_slope(&x, &y)?)
    }
}

/// Runs a center estimator over every bin and scores it against truth.
pub fn evaluate_with(
    name: &str,
    bins: &[SnrBin],
    threshold: f64,
    mut estimate: impl FnMut(usize, &SnrBin) -> Result<Vec<f64>>,
) -> Result<MethodReport> {
    let mut out = Vec::with_capacity(bins.len());
    let t_all = Instant::now();
    for (b, bin) in bins.iter().enumerate() {
        let t = Instant::now();
        let centers = estimate(b, bin)?;
        let wall = t.elapsed().as_secs_f64();
        if centers.len() != bin.items.len() {
            return Err(Error::LengthMismatch { expected: bin.items.len(), got: centers.len() }.into());
        }
        let errors = centers.iter().zip(&bin.items).map(|(c, l)| c - l.truth.center()).collect();
        out.push(BinReport::from_errors(bin.target_snr, errors, threshold, wall));
    }
    Ok(MethodReport {
        method: name.to_string(),
        bins: out,
        total_wall_s: t_all.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    })
}

pub fn evaluate_method(method: BenchMethod, ctx: &MethodContext, bins: &[SnrBin], threshold: f64) -> Result<MethodReport> {
    evaluate_with(method.name(), bins, threshold, |b, bin| {
        // distinct MC seeds per bin and spectrum
        estimate_centers(method, ctx, &bin.items, (b as u64) << 32)
    })
}

/// Standardized-residual statistics for each regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Indexed like [`TargetVector::to_array`].
    pub per_output: Vec<Calibration>,
}

impl CalibrationReport {
    pub const NAMES: [&'static str; 5] = ["center", "splitting", "w1", "w2", "rho"];

    pub fn center(&self) -> &Calibration {
        &self.per_output[0]
    }
}

pub fn calibration_report(preds: &[Prediction], truths: &[TargetVector]) -> Result<CalibrationReport> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch { expected: truths.len(), got: preds.len() }.into());
    }
    let per_output = (0..5)
        .map(|j| {
            let errors: Vec<f64> = preds.iter().zip(truths).map(|(p, t)| p.mean.to_array()[j] - t.to_array()[j]).collect();
            let sigmas: Vec<f64> = preds.iter().map(|p| p.sigma()[j]).collect();
            calibration(&errors, &sigmas)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CalibrationReport { per_output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub n_spectra: usize,
    pub runs: usize,
    pub median_s: f64,
    pub per_spectrum_s: f64,
    pub threads: usize,
}

/// Median wall time of `runs` repetitions of each method on the same spectra,
/// after one untimed warm-up on a small prefix.
pub fn timing_harness(methods: &[BenchMethod], ctx: &MethodContext, items: &[LabeledSpectrum], runs: usize) -> Result<Vec<TimingRow>> {
    let runs = runs.max(1);
    let mut rows = Vec::new();
    if items.is_empty() {
        return Ok(rows);
    }
    for &m in methods {
        estimate_centers(m, ctx, &items[..items.len().min(8)], 0)?;
        let mut times: Vec<f64> = (0..runs)
            .map(|_| {
                let t = Instant::now();
                estimate_centers(m, ctx, items, 0).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let median_s = times[times.len() / 2];
        rows.push(TimingRow {
            method: m.name().into(),
            n_spectra: items.len(),
            runs,
            median_s,
            per_spectrum_s: median_s / items.len() as f64,
            threads: rayon::current_num_threads(),
        });
    }
    Ok(rows)
}

pub const RESULTS_CSV: &str = "bench_results.csv";
pub const ERRORS_CSV: &str = "bench_errors.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const SUCCESS_SVG: &str = "success_vs_snr.svg";
pub const RMSE_SVG: &str = "rmse_vs_snr.svg";
pub const RESIDUAL_SVG: &str = "residual_hist.svg";

/// One row of `bench_results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub target_snr: f64,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rmse: f64,
    pub mean_error: f64,
    pub max_abs_error: f64,
    pub failures: usize,
    pub wall_time_s: f64,
}

impl ResultRow {
    fn new(method: &str, b: &BinReport) -> Self {
        Self {
            method: method.into(),
            target_snr: b.target_snr,
            n: b.n,
            successes: b.successes,
            success_rate: b.success_rate,
            ci_low: b.ci_low,
            ci_high: b.ci_high,
            rmse: b.rmse,
            mean_error: b.mean_error,
            max_abs_error: b.max_abs_error,
            failures: b.failures,
            wall_time_s: b.wall_time_s,
        }
    }
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reference `RMSE = k / SNR` anchored at the first finite point of the
/// first report.
pub fn poisson_reference(reports: &[MethodReport]) -> Option<Series> {
    let first = reports.first()?;
    let anchor = first.bins.iter().find(|b| b.rmse.is_finite() && b.rmse > 0.0)?;
    let k = anchor.rmse * anchor.target_snr;
    let points = first.bins.iter().map(|b| (b.target_snr, k / b.target_snr)).collect();
    Some(Series { name: "1/SNR".into(), points, dashed: true })
}

/// Writes CSV tables and SVG plots into `out_dir`; returns the written paths.
pub fn emit_reports(
    reports: &[MethodReport],
    calibration: Option<&CalibrationReport>,
    timing: &[TimingRow],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let rows: Vec<ResultRow> = reports.iter().flat_map(|r| r.bins.iter().map(|b| ResultRow::new(&r.method, b))).collect();
    let p = out_dir.join(RESULTS_CSV);
    write_csv(&p, &rows)?;
    written.push(p);

    let p = out_dir.join(ERRORS_CSV);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["method", "target_snr", "index", "error"])?;
    for r in reports {
        for b in &r.bins {
            for (i, e) in b.errors.iter().enumerate() {
                w.write_record([r.method.clone(), b.target_snr.to_string(), i.to_string(), e.to_string()])?;
            }
        }
    }
    w.flush()?;
    written.push(p);

    if !timing.is_empty() {
        let p = out_dir.join(TIMING_CSV);
        write_csv(&p, timing)?;
        written.push(p);
    }

    let series = |f: fn(&BinReport) -> f64| -> Vec<Series> {
        reports
            .iter()
            .map(|r| Series { name: r.method.clone(), points: r.bins.iter().map(|b| (b.target_snr, f(b))).collect(), dashed: false })
            .collect()
    };
    let success = LinePlot {
        title: "Center success rate".into(),
        x_label: "SNR".into(),
        y_label: "success rate".into(),
        log_x: true,
        log_y: false,
        series: series(|b| b.success_rate),
    };
    let p = out_dir.join(SUCCESS_SVG);
    std::fs::write(&p, success.render())?;
    written.push(p);

    let mut rmse_series = series(|b| b.rmse);
    rmse_series.extend(poisson_reference(reports));
    let rmse = LinePlot {
        title: "Center RMSE".into(),
        x_label: "SNR".into(),
        y_label: "RMSE (normalized)".into(),
        log_x: true,
        log_y: true,
        series: rmse_series,
    };
    let p = out_dir.join(RMSE_SVG);
    std::fs::write(&p, rmse.render())?;
    written.push(p);

    if let Some(cal) = calibration {
        let p = out_dir.join(CALIBRATION_CSV);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["output", "n", "mean_error", "z_mean", "z_std"])?;
        for (name, c) in CalibrationReport::NAMES.iter().zip(&cal.per_output) {
            w.write_record([name.to_string(), c.n.to_string(), c.mean_error.to_string(), c.z_mean.to_string(), c.z_std.to_string()])?;
        }
        w.flush()?;
        written.push(p);

        let h = &cal.center().histogram;
        let total = h.total().max(1) as f64;
        let density: Vec<f64> = h.counts.iter().map(|&c| c as f64 / (total * h.bin_width())).collect();
        let normal = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let svg = histogram_svg("Standardized center residuals", "z", (h.lo, h.hi), &density, Some(("N(0,1)", &normal)));
        let p = out_dir.join(RESIDUAL_SVG);
        std::fs::write(&p, svg)?;
        written.push(p);
    }
    Ok(written)
}
