//! Randomized invariants of the line-shape model, normalization and physics transforms.

use odmr_core::fitter::FitModelParams;
use odmr_core::physics::{bz_to_splitting, splitting_to_bz, PhysicsConstants};
use odmr_core::spectrum::{double_lorentzian, zscore, FrequencyGrid, LineshapeParams};
use odmr_core::stats::success_rate;
use proptest::prelude::*;

fn grid() -> FrequencyGrid {
    FrequencyGrid::standard()
}

prop_compose! {
    fn lineshape()(
        center in 0.3f64..0.7,
        splitting in 0.0f64..0.3,
        w1 in 0.01f64..0.1,
        w2 in 0.01f64..0.1,
        c1 in 0.001f64..0.4,
        c2 in 0.001f64..0.4,
    ) -> LineshapeParams {
        LineshapeParams::from_center_splitting(center, splitting, w1, w2, c1, c2).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn values_stay_inside_the_open_contrast_band(p in lineshape()) {
        let s = double_lorentzian(&p, &grid());
        for &v in s.values() {
            prop_assert!(v < 1.0);
            prop_assert!(v > 1.0 - p.c1 - p.c2);
        }
    }

    #[test]
    fn center_splitting_view_is_exact(c in 0.0f64..1.0, s in 0.0f64..0.5) {
        let p = LineshapeParams { x1: c - s / 2.0, x2: c + s / 2.0, w1: 0.05, w2: 0.05, c1: 0.1, c2: 0.1 };
        let q = LineshapeParams::from_center_splitting(c, s, 0.05, 0.05, 0.1, 0.1).unwrap();
        prop_assert_eq!(p.x1, q.x1);
        prop_assert_eq!(p.x2, q.x2);
    }

    #[test]
    fn zscore_ignores_positive_affine_maps(p in lineshape(), a in 1e-3f64..1e4, b in -1e3f64..1e3) {
        let s = double_lorentzian(&p, &grid());
        let z = zscore(s.values()).unwrap();
        let mapped: Vec<f64> = s.values().iter().map(|v| a * v + b).collect();
        let zm = zscore(&mapped).unwrap();
        for (u, v) in z.values.iter().zip(&zm.values) {
            prop_assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn normalized_values_have_zero_mean_unit_std(p in lineshape()) {
        let z = zscore(double_lorentzian(&p, &grid()).values()).unwrap();
        let n = z.values.len() as f64;
        let mean = z.values.iter().sum::<f64>() / n;
        let var = z.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn only_the_contrast_ratio_survives_normalization(p in lineshape(), kappa in 0.01f64..0.45) {
        // (kappa, kappa * c2 / c1) is (1 - kappa/c1) + (kappa/c1) * S, an affine image of S
        let q = LineshapeParams { c1: kappa, c2: kappa * p.c2 / p.c1, ..p };
        prop_assume!(q.c2 < 1.0);
        let a = zscore(double_lorentzian(&p, &grid()).values()).unwrap();
        let b = zscore(double_lorentzian(&q, &grid()).values()).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn field_is_monotone_in_splitting(d0 in 0.0f64..50.0, a in 0.0f64..200.0, b in 0.0f64..200.0) {
        let k = PhysicsConstants::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f_lo = splitting_to_bz(lo, d0, &k).unwrap().bz;
        let f_hi = splitting_to_bz(hi, d0, &k).unwrap().bz;
        prop_assert!(f_lo <= f_hi);
    }

    #[test]
    fn field_survives_the_forward_model(b in 0.0f64..100.0, d0 in 0.0f64..40.0) {
        let k = PhysicsConstants::default();
        let back = splitting_to_bz(bz_to_splitting(b, d0, &k), d0, &k).unwrap();
        prop_assert!(!back.below_baseline);
        prop_assert!((back.bz - b).abs() < 1e-6, "{} vs {b}", back.bz);
    }

    #[test]
    fn label_swap_gives_the_same_curve(p in lineshape(), baseline in 0.5f64..2.0) {
        let fwd = FitModelParams::from_lineshape(&p, baseline);
        let swapped = FitModelParams { x1: fwd.x2, x2: fwd.x1, w1: fwd.w2, w2: fwd.w1, c1: fwd.c2, c2: fwd.c1, ..fwd };
        for x in grid().points() {
            prop_assert!((fwd.eval(x) - swapped.eval(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn success_rate_grows_with_threshold(errors in prop::collection::vec(-0.05f64..0.05, 1..200), t in 1e-4f64..0.05, dt in 0.0f64..0.05) {
        prop_assert!(success_rate(&errors, t) <= success_rate(&errors, t + dt));
    }
}
