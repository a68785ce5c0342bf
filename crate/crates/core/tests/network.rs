//! Network initialization, batching and gradient oracles.

use odmr_core::nn::{lr_schedule, ArchSpec, ModelWeights, TrainConfig, OUTPUT_DIM};
use odmr_core::rng::{domain, stream};
use odmr_core::synth::TargetVector;
use rand::Rng;

#[test]
fn he_init_matches_its_target_spread() {
    let arch = ArchSpec::from_widths(1000, &[], &[100], OUTPUT_DIM).unwrap();
    let w = ModelWeights::<f64>::init(arch.clone(), 8);
    let layer = w.layer_weight(0);
    assert_eq!(layer.len(), 100_000);
    let n = layer.len() as f64;
    let mean = layer.iter().sum::<f64>() / n;
    let std = (layer.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target = (2.0f64 / 1000.0).sqrt();
    assert!((std / target - 1.0).abs() < 0.05, "{std} vs {target}");
    for l in 0..w.slots().len() {
        assert!(w.layer_bias(l).iter().all(|&b| b == 0.0));
    }
    assert_eq!(w, ModelWeights::<f64>::init(arch, 8));
}

fn random_inputs(seed: u64, batch: usize, len: usize) -> Vec<f64> {
    let mut r = stream(seed, domain::SYNTH, 0);
    (0..batch * len).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn batching_never_changes_a_prediction() {
    let arch = ArchSpec::from_widths(101, &[(4, 13), (17, 11), (8, 9)], &[16], OUTPUT_DIM).unwrap();
    let w = ModelWeights::<f32>::init(arch, 1);
    let batch = 9;
    let x: Vec<f32> = random_inputs(2, batch, 101).into_iter().map(|v| v as f32).collect();
    let all = w.predict_batch(&x, batch).unwrap();
    for (b, p) in all.iter().enumerate() {
        let single = w.predict(&x[b * 101..(b + 1) * 101]).unwrap();
        assert_eq!(&single, p, "sample {b}");
    }
    // reversed order gives reversed outputs
    let rev: Vec<f32> = (0..batch).rev().flat_map(|b| x[b * 101..(b + 1) * 101].to_vec()).collect();
    let out = w.predict_batch(&rev, batch).unwrap();
    for b in 0..batch {
        assert_eq!(out[b], all[batch - 1 - b]);
    }
}

fn targets(seed: u64, n: usize) -> Vec<TargetVector> {
    let mut r = stream(seed, domain::SYNTH, 1);
    (0..n).map(|_| TargetVector::from_array([r.random(), r.random(), r.random(), r.random(), r.random()])).collect()
}

#[test]
fn gradient_scales_linearly_with_the_loss_weight() {
    let arch = ArchSpec::from_widths(24, &[(3, 5), (5, 4)], &[7], OUTPUT_DIM).unwrap();
    let w = ModelWeights::<f64>::init(arch, 4);
    let x = random_inputs(5, 3, 24);
    let t = targets(5, 3);
    let (l1, g1) = w.loss_and_gradient(&x, &t, 1.0).unwrap();
    let (l2, g2) = w.loss_and_gradient(&x, &t, 2.0).unwrap();
    let (_, g0) = w.loss_and_gradient(&x, &t, 0.0).unwrap();
    assert_eq!(l1, l2);
    for ((a, b), z) in g1.iter().zip(&g2).zip(&g0) {
        assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
        assert_eq!(*z, 0.0);
    }
}

#[test]
fn gradients_match_central_differences_on_random_nets() {
    let mut r = stream(77, domain::INIT, 0);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let len = r.random_range(12..24);
        let c1 = r.random_range(1..4);
        let c2 = r.random_range(1..4);
        let k1 = r.random_range(1..5);
        let k2 = r.random_range(1..5);
        let hidden = r.random_range(2..7);
        let arch = ArchSpec::from_widths(len, &[(c1, k1), (c2, k2)], &[hidden], OUTPUT_DIM).unwrap();
        assert!(arch.param_count() <= 500);
        let mut w = ModelWeights::<f64>::init(arch, trial);
        // nudge biases off zero so every ReLU sees both signs
        for p in w.params.iter_mut() {
            *p += 0.05 * (r.random::<f64>() - 0.5);
        }
        let batch = 2;
        let x = random_inputs(trial, batch, len);
        let t = targets(trial, batch);
        let (_, g) = w.loss_and_gradient(&x, &t, 1.0).unwrap();
        let h = 1e-6;
        for i in 0..w.params.len() {
            let orig = w.params[i];
            w.params[i] = orig + h;
            let (lp, _) = w.loss_and_gradient(&x, &t, 1.0).unwrap();
            w.params[i] = orig - h;
            let (lm, _) = w.loss_and_gradient(&x, &t, 1.0).unwrap();
            w.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn schedule_has_no_jump_after_warmup() {
    let cfg = TrainConfig::default();
    let total = cfg.total_steps();
    let warm = cfg.warmup_steps(total);
    let a = lr_schedule(warm, total, &cfg).unwrap();
    let b = lr_schedule(warm + 1, total, &cfg).unwrap();
    let before = lr_schedule(warm - 1, total, &cfg).unwrap();
    let bound = cfg.eta_max * std::f64::consts::PI / total as f64;
    assert!((a - b).abs() < bound);
    assert!(a - before < cfg.eta_max * 0.9 / warm as f64 + 1e-15);
}
