//! Benchmark bins, scoring, calibration, timing and report files.

use proptest::prelude::*;

use odmr_core::fitter::FitConfig;
use odmr_core::nn::{ArchSpec, ModelWeights, Prediction};
use odmr_core::rng::splitmix64;
use odmr_core::synth::{NoiseModel, PriorConfig, TargetVector};
use odmr_core::INPUT_LENGTH;
use odmr_forge::bench::{
    calibration_report, emit_reports, estimate_centers, evaluate_method, evaluate_with, load_results, make_snr_bins, poisson_reference,
    timing_harness, BenchConfig, BenchMethod, BinReport, MethodContext, MethodReport, RESULTS_CSV, RMSE_SVG, SUCCESS_SVG,
};

fn config(grid: Vec<f64>, n: usize, seed: u64) -> BenchConfig {
    BenchConfig { snr_grid: grid, n_per_bin: n, success_threshold: 0.003, seed }.validated().unwrap()
}

fn tiny_model() -> ModelWeights<f32> {
    ModelWeights::init(ArchSpec::from_widths(INPUT_LENGTH, &[(4, 13)], &[8], 10).unwrap(), 2)
}

#[test]
fn photon_budgets_hit_the_target_snr() {
    let prior = PriorConfig::default();
    let bins = make_snr_bins(&config(vec![2.0, 10.0, 45.0], 64, 1), &prior, NoiseModel::Hybrid).unwrap();
    for bin in &bins {
        for l in &bin.items {
            let c = l.truth.c1.max(l.truth.c2);
            let want = 101.0 * (bin.target_snr / c).powi(2);
            assert!((l.total_photons / want - 1.0).abs() < 1e-12);
            assert!((l.snr - bin.target_snr).abs() < 1e-9);
        }
    }
    // contrast 0.1 at SNR 10 needs 1e4 photons per point
    assert!((101.0 * (10.0f64 / 0.1).powi(2) - 1.01e6).abs() < 1e-6);
}

#[test]
fn bins_are_seeded() {
    let prior = PriorConfig::default();
    let a = make_snr_bins(&config(vec![5.0, 20.0], 16, 3), &prior, NoiseModel::Hybrid).unwrap();
    let b = make_snr_bins(&config(vec![5.0, 20.0], 16, 3), &prior, NoiseModel::Hybrid).unwrap();
    let c = make_snr_bins(&config(vec![5.0, 20.0], 16, 4), &prior, NoiseModel::Hybrid).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.items.iter().zip(&y.items).all(|(p, q)| p.raw == q.raw && p.truth == q.truth));
    }
    assert_ne!(a[0].items[0].raw, c[0].items[0].raw);
    // the two bins draw different line shapes
    assert_ne!(a[0].items[0].truth, a[1].items[0].truth);
}

#[test]
fn unreachable_or_empty_grids_are_rejected() {
    let prior = PriorConfig::default();
    assert!(BenchConfig { snr_grid: vec![], ..BenchConfig::default() }.validated().is_err());
    assert!(BenchConfig { success_threshold: 0.0, ..BenchConfig::default() }.validated().is_err());
    for snr in [0.0, -3.0, f64::NAN, 1e7] {
        assert!(make_snr_bins(&config(vec![snr], 2, 0), &prior, NoiseModel::Hybrid).is_err(), "{snr}");
    }
}

#[test]
fn a_perfect_estimator_scores_one() {
    let bins = make_snr_bins(&config(vec![3.5, 14.0], 40, 5), &PriorConfig::default(), NoiseModel::Hybrid).unwrap();
    let r = evaluate_with("oracle", &bins, 0.003, |_, bin| Ok(bin.items.iter().map(|l| l.truth.center()).collect())).unwrap();
    for b in &r.bins {
        assert_eq!((b.success_rate, b.successes, b.failures), (1.0, 40, 0));
        assert_eq!((b.rmse, b.mean_error, b.max_abs_error), (0.0, 0.0, 0.0));
        assert!(b.ci_low > 0.9 && b.ci_high == 1.0);
    }
    let wrong_len = evaluate_with("short", &bins, 0.003, |_, _| Ok(vec![0.5]));
    assert!(wrong_len.is_err());
}

fn wilson(k: f64, n: f64, z: f64) -> (f64, f64) {
    let p = k / n;
    let c = (p + z * z / (2.0 * n)) / (1.0 + z * z / n);
    let h = z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    ((c - h).max(0.0), (c + h).min(1.0))
}

proptest! {
    #[test]
    fn bin_statistics_are_consistent(errors in prop::collection::vec(-0.02f64..0.02, 1..300), thr in 1e-4f64..0.02) {
        let b = BinReport::from_errors(7.0, errors.clone(), thr, 0.0);
        let n = errors.len() as f64;
        let k = errors.iter().filter(|e| e.abs() < thr).count();
        prop_assert_eq!(b.successes, k);
        prop_assert!(b.rmse + 1e-15 >= b.mean_error.abs());
        prop_assert!(b.max_abs_error + 1e-15 >= b.rmse);
        let (lo, hi) = wilson(k as f64, n, 1.959964);
        prop_assert!((b.ci_low - lo).abs() < 1e-12 && (b.ci_high - hi).abs() < 1e-12);
        prop_assert!(b.ci_low <= b.success_rate && b.success_rate <= b.ci_high);
        prop_assert!(b.success_rate_at(thr * 2.0) >= b.success_rate);
    }
}

#[test]
fn failed_extractions_count_against_success() {
    let b = BinReport::from_errors(5.0, vec![0.0, f64::NAN, 0.001, 0.1], 0.003, 0.0);
    assert_eq!((b.n, b.successes, b.failures), (4, 2, 1));
    assert_eq!(b.success_rate, 0.5);
    assert!(b.rmse.is_finite());
}

fn synthetic_report(name: &str, k: f64) -> MethodReport {
    let bins = [2.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|&snr| {
            let e = k / snr;
            BinReport::from_errors(snr, vec![e, -e, e, -e], 0.003, 0.25)
        })
        .collect();
    MethodReport { method: name.into(), bins, total_wall_s: 1.0, threads: 1 }
}

#[test]
fn slopes_and_reference_line() {
    let r = synthetic_report("fake", 0.03);
    assert!((r.rmse_slope(2.0, 10.0).unwrap() + 1.0).abs() < 1e-12);
    let reference = poisson_reference(&[r.clone()]).unwrap();
    for ((snr, y), b) in reference.points.iter().zip(&r.bins) {
        assert!((y - b.rmse).abs() < 1e-15, "{snr}");
    }
    assert!(r.rmse_slope(20.0, 20.0).is_err());
}

#[test]
fn calibration_of_honest_sigmas_is_unit() {
    let mut s = 17u64;
    let mut uniform = || ((splitmix64(&mut s) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for i in 0..20_000 {
        let sigma = 0.001 * (1.0 + (i % 7) as f64);
        let z = (-2.0 * uniform().ln()).sqrt() * (std::f64::consts::TAU * uniform()).cos();
        let truth = TargetVector { center: 0.5, splitting: 0.1, w1: 0.02, w2: 0.03, rho: 0.9 };
        let mut mean = truth;
        mean.center += sigma * z + 0.0004;
        preds.push(Prediction { mean, log_var: [2.0 * sigma.ln(), 0.0, 0.0, 0.0, 0.0] });
        truths.push(truth);
    }
    let cal = calibration_report(&preds, &truths).unwrap();
    let c = cal.center();
    assert!((c.mean_error - 0.0004).abs() < 1e-4);
    assert!(c.z_mean.abs() < 0.05, "{}", c.z_mean);
    assert!((c.z_std - 1.0).abs() < 0.05, "{}", c.z_std);
    assert!(calibration_report(&preds[..3], &truths).is_err());
}

#[test]
fn methods_are_reproducible_and_timed() {
    let bins = make_snr_bins(&config(vec![10.0], 12, 6), &PriorConfig::default(), NoiseModel::Hybrid).unwrap();
    let w = tiny_model();
    let fit = FitConfig { mc_restarts: 8, ..FitConfig::default() };
    let prior = PriorConfig::default();
    let ctx = MethodContext { weights: Some(&w), fit: &fit, prior: &prior, seed: 1, single_init_center: 0.5 };
    for m in [BenchMethod::Cnn, BenchMethod::Hybrid, BenchMethod::Mc, BenchMethod::Single] {
        let a = estimate_centers(m, &ctx, &bins[0].items, 0).unwrap();
        let b = estimate_centers(m, &ctx, &bins[0].items, 0).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{m:?}");
        assert_eq!(a.len(), 12);
    }
    let no_model = MethodContext { weights: None, ..ctx };
    assert_eq!(estimate_centers(BenchMethod::Cnn, &no_model, &bins[0].items, 0).unwrap_err().exit_code(), 2);

    let rows = timing_harness(&[BenchMethod::Cnn, BenchMethod::Single], &ctx, &bins[0].items, 3).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!((r.n_spectra, r.runs), (12, 3));
        assert!((r.per_spectrum_s * 12.0 - r.median_s).abs() < 1e-12);
    }
    assert!(timing_harness(&[BenchMethod::Cnn], &ctx, &[], 3).unwrap().is_empty());
}

#[test]
fn reports_round_trip_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let bins = make_snr_bins(&config(vec![5.0, 20.0], 16, 7), &PriorConfig::default(), NoiseModel::Hybrid).unwrap();
    let w = tiny_model();
    let fit = FitConfig::default();
    let prior = PriorConfig::default();
    let ctx = MethodContext { weights: Some(&w), fit: &fit, prior: &prior, seed: 0, single_init_center: 0.5 };
    let reports = vec![
        evaluate_method(BenchMethod::Single, &ctx, &bins, 0.003).unwrap(),
        synthetic_report("fake", 0.01),
    ];
    let paths = emit_reports(&reports, None, &[], dir.path()).unwrap();
    assert!(paths.iter().all(|p| p.exists()));

    let rows = load_results(&dir.path().join(RESULTS_CSV)).unwrap();
    let bins_in_order: Vec<(&str, &BinReport)> = reports.iter().flat_map(|r| r.bins.iter().map(move |b| (r.method.as_str(), b))).collect();
    assert_eq!(rows.len(), bins_in_order.len());
    for (row, (method, b)) in rows.iter().zip(&bins_in_order) {
        assert_eq!(row.method, *method);
        assert_eq!((row.target_snr, row.n, row.successes, row.failures), (b.target_snr, b.n, b.successes, b.failures));
        for (x, y) in [(row.success_rate, b.success_rate), (row.ci_low, b.ci_low), (row.rmse, b.rmse), (row.mean_error, b.mean_error)] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    for name in [SUCCESS_SVG, RMSE_SVG] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let labels: String = doc.descendants().filter_map(|n| n.text()).collect();
        assert!(labels.contains("single") && labels.contains("fake"), "{name}");
    }
}
