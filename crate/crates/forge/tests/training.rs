//! Training driver: determinism, resumption and learning progress on a tiny
//! network.

use odmr_core::nn::{ArchSpec, ModelWeights, TrainConfig};
use odmr_core::rng::{child_seed, domain};
use odmr_core::synth::{generate_batch, NoiseModel, PriorConfig};
use odmr_core::INPUT_LENGTH;
use odmr_forge::infer::infer_batch;
use odmr_forge::train::{batch_gradient, train, tree_sum, LogRow, TrainOptions, ValidationSet};

fn arch() -> ArchSpec {
    ArchSpec::from_widths(INPUT_LENGTH, &[(4, 13), (4, 9)], &[16], 10).unwrap()
}

fn options(batch: usize, steps: u64, seed: u64) -> TrainOptions {
    let cfg = TrainConfig { batch_size: batch, total_samples: batch as u64 * steps, micro_batch: 16, seed, ..TrainConfig::default() };
    TrainOptions { val_size: 128, log_every: batch as u64 * 4, ..TrainOptions::new(arch(), cfg) }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn run(opts: &TrainOptions) -> (ModelWeights<f32>, Vec<LogRow>) {
    let mut log = Vec::new();
    let w = train(opts, None, |row, _| {
        log.push(*row);
        Ok(())
    })
    .unwrap();
    (w, log)
}

#[test]
fn training_is_bitwise_reproducible_across_thread_counts() {
    let opts = options(64, 12, 5);
    let (a, log_a) = in_pool(1, || run(&opts));
    let (b, log_b) = in_pool(3, || run(&opts));
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.len(), 3);
    assert_eq!(a.step, 12);
    let (c, _) = run(&options(64, 12, 6));
    assert_ne!(a.params, c.params);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let opts = options(32, 10, 8);
    let (full, full_log) = run(&opts);
    let mut snapshot = None;
    train(&opts, None, |_, w| {
        if snapshot.is_none() {
            snapshot = Some(w.clone());
        }
        Ok(())
    })
    .unwrap();
    let snapshot = snapshot.unwrap();
    assert_eq!(snapshot.step, 4);
    let mut tail = Vec::new();
    let resumed = train(&opts, Some(snapshot), |row, _| {
        tail.push(*row);
        Ok(())
    })
    .unwrap();
    assert_eq!(resumed, full);
    assert_eq!(tail, full_log[1..]);
}

#[test]
fn zero_steps_leave_the_initialization_untouched() {
    let opts = options(32, 0, 4);
    let (w, log) = run(&opts);
    assert!(log.is_empty());
    assert_eq!(w.step, 0);
    assert_eq!(w.params, ModelWeights::<f32>::init(arch(), child_seed(4, domain::INIT)).params);
}

#[test]
fn mismatched_resume_is_rejected() {
    let other = ModelWeights::init(ArchSpec::from_widths(INPUT_LENGTH, &[(2, 5)], &[8], 10).unwrap(), 1);
    assert!(train(&options(32, 2, 1), Some(other), |_, _| Ok(())).is_err());
}

#[test]
fn validation_loss_drops_within_a_hundred_thousand_samples() {
    let opts = TrainOptions { val_size: 1024, log_every: 25_600, ..options(256, 391, 2) };
    let init = ModelWeights::init(arch(), child_seed(2, domain::INIT));
    let val = ValidationSet::generate(2, 1024, &opts.prior, opts.noise).unwrap();
    let (before, _) = val.evaluate(&init).unwrap();
    let (w, log) = run(&opts);
    let (after, _) = val.evaluate(&w).unwrap();
    assert!(w.step * 256 >= 100_000);
    assert_eq!(log.last().unwrap().val_loss, after);
    assert!(after < before - 1.0, "validation loss {before} -> {after}");
    for pair in log.windows(2) {
        assert!(pair[1].lr <= pair[0].lr, "{pair:?}");
    }
}

#[test]
fn batched_inference_matches_one_at_a_time() {
    let w = ModelWeights::init(arch(), 3);
    let items = generate_batch(1, 0, 150, &PriorConfig::default(), NoiseModel::Hybrid).unwrap();
    let inputs: Vec<f32> = items.iter().flat_map(|l| l.normalized.values.iter().map(|&v| v as f32)).collect();
    let batched = in_pool(3, || infer_batch(&w, &inputs).unwrap());
    assert_eq!(batched.len(), 150);
    for (i, p) in batched.iter().enumerate() {
        assert_eq!(*p, w.predict(&inputs[i * INPUT_LENGTH..(i + 1) * INPUT_LENGTH]).unwrap(), "spectrum {i}");
    }
    assert!(infer_batch(&w, &inputs[..INPUT_LENGTH + 3]).is_err());
}

#[test]
fn gradient_reduction_follows_a_fixed_tree() {
    let w = ModelWeights::init(arch(), 6);
    let items = generate_batch(9, 0, 80, &PriorConfig::default(), NoiseModel::Hybrid).unwrap();
    let inputs: Vec<f32> = items.iter().flat_map(|l| l.normalized.values.iter().map(|&v| v as f32)).collect();
    let targets: Vec<_> = items.iter().map(|l| l.target()).collect();
    let (loss1, g1) = in_pool(1, || batch_gradient(&w, &inputs, &targets, 16).unwrap());
    let (loss3, g3) = in_pool(3, || batch_gradient(&w, &inputs, &targets, 16).unwrap());
    assert_eq!(g1, g3);
    assert_eq!(loss1.to_bits(), loss3.to_bits());

    // the same sum spelled out: ((m0 + m1) + (m2 + m3)) + m4
    let m: Vec<Vec<f32>> = (0..5)
        .map(|c| w.loss_and_gradient(&inputs[c * 16 * INPUT_LENGTH..(c + 1) * 16 * INPUT_LENGTH], &targets[c * 16..(c + 1) * 16], 1.0 / 80.0).unwrap().1)
        .collect();
    let manual: Vec<f32> = (0..w.len()).map(|j| ((m[0][j] + m[1][j]) + (m[2][j] + m[3][j])) + m[4][j]).collect();
    assert_eq!(g1, manual);
    assert_eq!(tree_sum(m), manual);
}
