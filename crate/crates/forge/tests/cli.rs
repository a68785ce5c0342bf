//! The command-line tool, driven as a subprocess.

use std::path::Path;
use std::process::{Command, Output};

use odmr_core::nn::{ArchSpec, ModelWeights};
use odmr_core::INPUT_LENGTH;
use odmr_forge::bench::load_results;
use odmr_forge::formats::{checkpoint, dataset};
use odmr_forge::widefield::{load_param_map, load_scalar_map};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odmr-forge")).args(args).env_remove("ODMR_FORGE_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = forge(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The last stderr line must be a single JSON object naming the error kind.
fn error_kind(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"));
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.nvcnn");
    let w = ModelWeights::init(ArchSpec::from_widths(INPUT_LENGTH, &[(4, 13)], &[8], 10).unwrap(), 1);
    checkpoint::save(&w, &path).unwrap();
    path
}

#[test]
fn version_names_the_checkpoint_format() {
    let out = ok(&["version"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("odmr-forge "));
    assert!(text.contains("NVCNN1 v1"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["synth", "--bogus"], &["bench", "--n-per-bin", "many"], &[]] {
        assert_eq!(forge(args).status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["bench", "--methods", "warp", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn domain_and_io_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["bench", "--methods", "single", "--snr-grid=-4", "--n-per-bin", "2", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "domain");

    let out = forge(&["infer", "--checkpoint", p(&dir.path().join("missing.nvcnn")), "--input", "x.csv", "--out", "y.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");

    let junk = dir.path().join("junk.nvcnn");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = forge(&["infer", "--checkpoint", p(&junk), "--input", "x.csv", "--out", "y.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "format");
}

#[test]
fn config_files_are_overlaid_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    std::fs::write(&cfg, r#"{"n": 5, "seed": 3, "noise": "exact"}"#).unwrap();
    let out = dir.path().join("data.odmrsyn");
    ok(&["synth", "--config", p(&cfg), "--n", "7", "--out", p(&out)]);
    assert_eq!(dataset::load(&out).unwrap().len(), 7);

    let resolved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["command"], "synth");
    assert_eq!(resolved["n"], 7);
    assert_eq!(resolved["seed"], 3);
    assert_eq!(resolved["noise"], "exact");

    // the same file and seed reproduce the data byte for byte
    let again = dir.path().join("again.odmrsyn");
    ok(&["synth", "--config", p(&cfg), "--n", "7", "--out", p(&again), "--threads", "2"]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    std::fs::write(&cfg, r#"{"n": 5, "colour": "blue"}"#).unwrap();
    let bad = forge(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_kind(&bad), "config");
}

#[test]
fn bench_writes_one_row_per_bin() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let out_dir = dir.path().join("bench");
    ok(&["bench", "--methods", "cnn", "--snr-grid", "10", "--n-per-bin", "8", "--checkpoint", p(&ckpt), "--out-dir", p(&out_dir)]);
    let rows = load_results(&out_dir.join("bench_results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].method.as_str(), rows[0].target_snr, rows[0].n), ("cnn", 10.0, 8));
    assert!(out_dir.join("resolved_config.json").exists());
    assert!(out_dir.join("calibration.csv").exists());

    let out_dir = dir.path().join("bench2");
    ok(&["bench", "--methods", "single,cnn", "--snr-grid", "5,20", "--n-per-bin", "4", "--checkpoint", p(&ckpt), "--out-dir", p(&out_dir)]);
    let rows = load_results(&out_dir.join("bench_results.csv")).unwrap();
    let keys: Vec<(String, f64)> = rows.into_iter().map(|r| (r.method, r.target_snr)).collect();
    assert_eq!(keys, [("single".into(), 5.0), ("single".into(), 20.0), ("cnn".into(), 5.0), ("cnn".into(), 20.0)]);
}

#[test]
fn train_then_infer_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train", "--out-dir", p(&run), "--conv", "4:13,4:9", "--hidden", "16", "--total-samples", "512", "--batch-size", "64",
        "--micro-batch", "16", "--val-size", "64", "--log-every", "256", "--seed", "4",
    ]);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let w = checkpoint::load(&run.join("model.nvcnn")).unwrap();
    assert_eq!(w.step, 8);

    let data = dir.path().join("spectra.csv");
    ok(&["synth", "--out", p(&data), "--n", "5", "--seed", "2"]);
    let preds = dir.path().join("preds.csv");
    ok(&["infer", "--checkpoint", p(&run.join("model.nvcnn")), "--input", p(&data), "--out", p(&preds)]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 6);

    for method in ["single", "mc", "hybrid"] {
        let fits = dir.path().join(format!("fit_{method}.csv"));
        ok(&["fit", "--input", p(&data), "--out", p(&fits), "--method", method, "--restarts", "4", "--checkpoint", p(&run.join("model.nvcnn"))]);
        let text = std::fs::read_to_string(&fits).unwrap();
        assert_eq!(text.lines().count(), 6, "{method}");
        assert!(text.lines().next().unwrap().starts_with("index,b,x1,x2"));
    }
}

#[test]
fn widefield_pipeline_recovers_a_noiseless_field() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["map", "simulate", "--height", "6", "--width", "7", "--noiseless", "--out-dir", p(&sim)]);
    for (cube, out) in [("cube.odmrcube", "delta"), ("baseline.odmrcube", "base")] {
        ok(&["map", "extract", "--cube", p(&sim.join(cube)), "--method", "mc", "--out-dir", p(&dir.path().join(out))]);
    }
    let params = load_param_map(&dir.path().join("delta/params.csv")).unwrap();
    assert_eq!((params.height, params.width, params.valid_count()), (6, 7, 42));

    let field = dir.path().join("field");
    ok(&["map", "field", "--delta", p(&dir.path().join("delta/params.csv")), "--baseline", p(&dir.path().join("base/params.csv")), "--out-dir", p(&field)]);
    let got = load_scalar_map(&field.join("field.csv")).unwrap();
    let want = load_scalar_map(&sim.join("true_field.csv")).unwrap();
    for (g, w) in got.values.iter().zip(&want.values) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
    for f in ["field.pgm", "field.svg", "resolved_config.json"] {
        assert!(field.join(f).exists(), "{f}");
    }

    let temp = dir.path().join("temp");
    ok(&["map", "temp", "--centers", p(&dir.path().join("delta/params.csv")), "--out-dir", p(&temp)]);
    let t = load_scalar_map(&temp.join("temperature.csv")).unwrap();
    // every pixel sits at the reference center, so at the reference temperature
    assert!(t.values.iter().all(|v| (v - 25.0).abs() < 1e-3), "{:?}", t.values);

    let stem = dir.path().join("render/splitting");
    ok(&["map", "render", "--map", p(&dir.path().join("delta/params.csv")), "--param", "splitting", "--out", p(&stem)]);
    assert!(stem.with_extension("pgm").exists() && stem.with_extension("svg").exists());
}
