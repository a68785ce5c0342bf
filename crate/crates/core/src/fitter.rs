//! Projected Levenberg-Marquardt fitting of the double-Lorentzian model
//! `f(x) = b (1 - c1 L(x; x1, w1) - c2 L(x; x2, w2))`.
//!
//! The normal equations are damped on `diag(JᵀJ)` (Marquardt scaling), steps
//! are accepted only when the mean squared error drops, and every accepted
//! point is clamped back into a parameter box.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{domain, Result};
use crate::nn::{ModelWeights, Prediction, Real};
use crate::rng;
use crate::spectrum::{zscore, LineshapeParams, Spectrum};
use crate::synth::{sample_params, PriorConfig};

pub const N_PARAMS: usize = 7;

/// Model parameters in normalized frequency units plus a free baseline `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitModelParams {
    pub b: f64,
    pub x1: f64,
    pub x2: f64,
    pub w1: f64,
    pub w2: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Box constraints applied after every accepted step.
pub const BOUNDS: [(f64, f64); N_PARAMS] = [
    (1e-9, 1e9),
    (-0.2, 1.2),
    (-0.2, 1.2),
    (1e-4, 0.5),
    (1e-4, 0.5),
    (0.0, 0.9),
    (0.0, 0.9),
];

impl FitModelParams {
    pub fn from_lineshape(p: &LineshapeParams, b: f64) -> Self {
        Self { b, x1: p.x1, x2: p.x2, w1: p.w1, w2: p.w2, c1: p.c1, c2: p.c2 }
    }

    pub fn lineshape(&self) -> LineshapeParams {
        LineshapeParams { x1: self.x1, x2: self.x2, w1: self.w1, w2: self.w2, c1: self.c1, c2: self.c2 }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [self.b, self.x1, self.x2, self.w1, self.w2, self.c1, self.c2]
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self { b: a[0], x1: a[1], x2: a[2], w1: a[3], w2: a[4], c1: a[5], c2: a[6] }
    }

    pub fn center(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn splitting(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn in_box(&self) -> bool {
        self.to_array().iter().zip(BOUNDS).all(|(v, (lo, hi))| v.is_finite() && *v >= lo && *v <= hi)
    }

    pub fn clamped(&self) -> Self {
        let mut a = self.to_array();
        for (v, (lo, hi)) in a.iter_mut().zip(BOUNDS) {
            *v = v.clamp(lo, hi);
        }
        Self::from_array(a)
    }

    /// Swaps the dip labels so that `x1 <= x2`.
    pub fn sorted(&self) -> Self {
        if self.x1 <= self.x2 {
            *self
        } else {
            Self { b: self.b, x1: self.x2, x2: self.x1, w1: self.w2, w2: self.w1, c1: self.c2, c2: self.c1 }
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let l1 = lorentz(x, self.x1, self.w1);
        let l2 = lorentz(x, self.x2, self.w2);
        self.b * (1.0 - self.c1 * l1 - self.c2 * l2)
    }
}

#[inline]
fn lorentz(x: f64, x0: f64, w: f64) -> f64 {
    let u = (x - x0) / w;
    1.0 / (1.0 + u * u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Converged when an accepted step lowers the MSE by less than this fraction.
    pub tol_mse_rel: f64,
    /// Converged when the proposed step is shorter than this.
    pub tol_step: f64,
    pub mc_restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            tol_mse_rel: 1e-10,
            tol_step: 1e-9,
            mc_restarts: 200,
        }
    }
}

impl FitConfig {
    pub fn validated(self) -> Result<Self> {
        let positive = [self.lambda_init, self.lambda_up, self.lambda_down, self.tol_mse_rel, self.tol_step];
        if self.max_iterations == 0 || self.mc_restarts == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(domain!("fit configuration values must be positive: {self:?}"));
        }
        Ok(self)
    }
}

/// Why a fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MseTolerance,
    StepTolerance,
    MaxIterations,
    /// Damping exceeded `1e12` without finding a usable step.
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: FitModelParams,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Index of the initialization that produced this result (Monte-Carlo mode).
    pub restart_index: usize,
}

const LAMBDA_CEILING: f64 = 1e12;

/// Residuals `f(x_i; p) - s_i` and the analytic Jacobian (`n x 7`, row-major).
pub fn residuals_and_jacobian(p: &FitModelParams, s: &Spectrum) -> Result<(Vec<f64>, Vec<[f64; N_PARAMS]>)> {
    if !p.in_box() {
        return Err(domain!("fit parameters outside the box: {p:?}"));
    }
    let n = s.values().len();
    let mut r = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    for (i, &y) in s.values().iter().enumerate() {
        let (ri, row) = point_terms(p, s.grid().point(i), y);
        r.push(ri);
        jac.push(row);
    }
    Ok((r, jac))
}

#[inline]
fn point_terms(p: &FitModelParams, x: f64, y: f64) -> (f64, [f64; N_PARAMS]) {
    let d1 = x - p.x1;
    let d2 = x - p.x2;
    let l1 = 1.0 / (1.0 + d1 * d1 / (p.w1 * p.w1));
    let l2 = 1.0 / (1.0 + d2 * d2 / (p.w2 * p.w2));
    let shape = 1.0 - p.c1 * l1 - p.c2 * l2;
    // dL/dx0 = 2 (x - x0) / w² L², dL/dw = 2 (x - x0)² / w³ L²
    let g1 = 2.0 * l1 * l1 / (p.w1 * p.w1);
    let g2 = 2.0 * l2 * l2 / (p.w2 * p.w2);
    let bc1 = p.b * p.c1;
    let bc2 = p.b * p.c2;
    let row = [
        shape,
        -bc1 * g1 * d1,
        -bc2 * g2 * d2,
        -bc1 * g1 * d1 * d1 / p.w1,
        -bc2 * g2 * d2 * d2 / p.w2,
        -p.b * l1,
        -p.b * l2,
    ];
    (p.b * shape - y, row)
}

fn mse_of(p: &FitModelParams, s: &Spectrum) -> f64 {
    let n = s.values().len();
    let grid = s.grid();
    let sum: f64 = s
        .values()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = p.eval(grid.point(i)) - y;
            r * r
        })
        .sum();
    sum / n as f64
}

/// Solves `a x = rhs` for a symmetric positive definite `a` (Cholesky).
fn cholesky_solve(mut a: [[f64; N_PARAMS]; N_PARAMS], rhs: [f64; N_PARAMS]) -> Option<[f64; N_PARAMS]> {
    for j in 0..N_PARAMS {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..N_PARAMS {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / d;
        }
    }
    let mut y = rhs;
    for i in 0..N_PARAMS {
        for k in 0..i {
            y[i] -= a[i][k] * y[k];
        }
        y[i] /= a[i][i];
    }
    for i in (0..N_PARAMS).rev() {
        for k in i + 1..N_PARAMS {
            y[i] -= a[k][i] * y[k];
        }
        y[i] /= a[i][i];
    }
    Some(y)
}

/// Levenberg-Marquardt from a single initialization.
pub fn lm_fit(s: &Spectrum, init: &FitModelParams, cfg: &FitConfig) -> Result<FitResult> {
    lm_fit_inner(s, init, cfg, None)
}

/// As [`lm_fit`], also recording the MSE after every accepted step
/// (starting with the initial MSE).
pub fn lm_fit_traced(s: &Spectrum, init: &FitModelParams, cfg: &FitConfig) -> Result<(FitResult, Vec<f64>)> {
    let mut trace = Vec::new();
    let r = lm_fit_inner(s, init, cfg, Some(&mut trace))?;
    Ok((r, trace))
}

fn lm_fit_inner(s: &Spectrum, init: &FitModelParams, cfg: &FitConfig, mut trace: Option<&mut Vec<f64>>) -> Result<FitResult> {
    if !init.in_box() {
        return Err(domain!("initial parameters outside the box: {init:?}"));
    }
    let grid = *s.grid();
    let mut p = *init;
    let mut mse = mse_of(&p, s);
    if let Some(t) = trace.as_deref_mut() {
        t.push(mse);
    }
    let mut lambda = cfg.lambda_init;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        if mse == 0.0 {
            stop = StopReason::MseTolerance;
            break;
        }
        let mut jtj = [[0.0; N_PARAMS]; N_PARAMS];
        let mut jtr = [0.0; N_PARAMS];
        for (i, &y) in s.values().iter().enumerate() {
            let (r, row) = point_terms(&p, grid.point(i), y);
            for a in 0..N_PARAMS {
                jtr[a] += row[a] * r;
                for b in 0..=a {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        for a in 0..N_PARAMS {
            for b in 0..a {
                jtj[b][a] = jtj[a][b];
            }
        }
        let diag_floor = 1e-12 * (0..N_PARAMS).map(|j| jtj[j][j]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

        loop {
            let mut damped = jtj;
            for j in 0..N_PARAMS {
                damped[j][j] += lambda * jtj[j][j].max(diag_floor);
            }
            let rhs = jtr.map(|g| -g);
            let Some(delta) = cholesky_solve(damped, rhs) else {
                lambda *= cfg.lambda_up;
                if lambda > LAMBDA_CEILING {
                    stop = StopReason::Singular;
                    break 'outer;
                }
                continue;
            };
            let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            if step_norm < cfg.tol_step {
                stop = StopReason::StepTolerance;
                break 'outer;
            }
            let mut trial = p.to_array();
            for (v, d) in trial.iter_mut().zip(delta) {
                *v += d;
            }
            let candidate = FitModelParams::from_array(trial).clamped();
            let trial_mse = mse_of(&candidate, s);
            if trial_mse < mse {
                let improvement = (mse - trial_mse) / mse;
                p = candidate;
                mse = trial_mse;
                lambda = (lambda / cfg.lambda_down).max(1e-15);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(mse);
                }
                if improvement < cfg.tol_mse_rel {
                    stop = StopReason::MseTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= cfg.lambda_up;
            if lambda > LAMBDA_CEILING {
                // no descent direction at any damping: a stationary point of the projected problem
                stop = StopReason::StepTolerance;
                break 'outer;
            }
        }
    }

    Ok(FitResult {
        params: p.sorted(),
        mse,
        iterations,
        converged: matches!(stop, StopReason::MseTolerance | StopReason::StepTolerance),
        stop,
        restart_index: 0,
    })
}

/// Initialization for restart `index`: baseline one, line shape from the prior.
pub fn mc_init(seed: u64, index: usize, prior: &PriorConfig) -> FitModelParams {
    let mut r = rng::stream(seed, rng::domain::MC_FIT, index as u64);
    FitModelParams::from_lineshape(&sample_params(&mut r, prior), 1.0).clamped()
}

/// Keeps the lower MSE; on ties the lower restart index wins.
pub fn better(a: FitResult, b: FitResult) -> FitResult {
    if b.mse < a.mse || (b.mse == a.mse && b.restart_index < a.restart_index) {
        b
    } else {
        a
    }
}

/// Single restart of the Monte-Carlo search.
pub fn mc_restart(s: &Spectrum, seed: u64, index: usize, cfg: &FitConfig, prior: &PriorConfig) -> Result<FitResult> {
    let mut r = lm_fit(s, &mc_init(seed, index, prior), cfg)?;
    r.restart_index = index;
    Ok(r)
}

/// Monte-Carlo restarted fit: `cfg.mc_restarts` independent initializations
/// drawn from the prior, lowest MSE wins.
pub fn mc_fit(s: &Spectrum, seed: u64, cfg: &FitConfig, prior: &PriorConfig) -> Result<FitResult> {
    if cfg.mc_restarts == 0 {
        return Err(domain!("need at least one Monte-Carlo restart"));
    }
    let mut best = mc_restart(s, seed, 0, cfg, prior)?;
    for i in 1..cfg.mc_restarts {
        best = better(best, mc_restart(s, seed, i, cfg, prior)?);
    }
    Ok(best)
}

/// Mean of the upper quartile of the values; a dip-insensitive baseline.
pub fn upper_quartile_mean(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let start = (3 * v.len()) / 4;
    let top = &v[start.min(v.len().saturating_sub(1))..];
    top.iter().sum::<f64>() / top.len() as f64
}

/// Initial fit parameters from a network prediction.
///
/// Positions and widths come from the prediction. The network cannot see the
/// absolute contrast, so `c1 = max(0, 1 - min(s)/b)` and `c2 = rho * c1`,
/// with `b` the upper-quartile baseline of the (mean-normalized) spectrum.
pub fn hybrid_init(pred: &Prediction, s: &Spectrum) -> FitModelParams {
    let b = upper_quartile_mean(s.values()).max(BOUNDS[0].0);
    let min = s.values().iter().copied().fold(f64::INFINITY, f64::min);
    let c1 = (1.0 - min / b).max(0.0);
    let t = pred.mean;
    let rho = if t.rho.is_finite() { t.rho.max(0.0) } else { 1.0 };
    FitModelParams {
        b,
        x1: t.center - t.splitting / 2.0,
        x2: t.center + t.splitting / 2.0,
        w1: t.w1,
        w2: t.w2,
        c1,
        c2: rho * c1,
    }
    .clamped()
}

/// Hybrid fit from an existing prediction (use when predictions come from a batch).
pub fn hybrid_fit_from_prediction(pred: &Prediction, s: &Spectrum, cfg: &FitConfig) -> Result<FitResult> {
    lm_fit(s, &hybrid_init(pred, s), cfg)
}

/// Network-seeded fit: one forward pass on the Z-scored spectrum, then a single LM run.
pub fn hybrid_fit<T: Real>(weights: &ModelWeights<T>, s: &Spectrum, cfg: &FitConfig) -> Result<FitResult> {
    let norm = zscore(s.values())?;
    let input: Vec<T> = norm.values.iter().map(|&v| T::of(v)).collect();
    let pred = weights.predict(&input)?;
    hybrid_fit_from_prediction(&pred, s, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{double_lorentzian, FrequencyGrid};
    use crate::synth::TargetVector;

    fn truth() -> FitModelParams {
        FitModelParams { b: 1.0, x1: 0.42, x2: 0.55, w1: 0.04, w2: 0.035, c1: 0.08, c2: 0.07 }
    }

    fn clean(p: &FitModelParams) -> Spectrum {
        let g = FrequencyGrid::standard();
        Spectrum::new(g, g.points().map(|x| p.eval(x)).collect()).unwrap()
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let p = truth();
        let (r, _) = residuals_and_jacobian(&p, &clean(&p)).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = FitModelParams { b: 1.1, ..truth() };
        let s = clean(&truth());
        let (_, jac) = residuals_and_jacobian(&p, &s).unwrap();
        let base = p.to_array();
        let h = 1e-6;
        for k in 0..N_PARAMS {
            let mut up = base;
            let mut dn = base;
            up[k] += h;
            dn[k] -= h;
            let (ru, _) = residuals_and_jacobian(&FitModelParams::from_array(up), &s).unwrap();
            let (rd, _) = residuals_and_jacobian(&FitModelParams::from_array(dn), &s).unwrap();
            for i in 0..s.values().len() {
                let fd = (ru[i] - rd[i]) / (2.0 * h);
                let a = jac[i][k];
                let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-7);
                assert!(err < 1e-6, "param {k} point {i}: fd {fd} analytic {a}");
            }
        }
    }

    #[test]
    fn lorentzian_derivatives_vanish_at_peak() {
        let p = truth();
        let (_, row) = point_terms(&p, p.x1, 0.0);
        // the second dip still contributes through its own columns only
        assert_eq!(row[1], 0.0);
        assert_eq!(row[3], 0.0);
    }

    #[test]
    fn rejects_out_of_box() {
        let p = FitModelParams { w1: 0.0, ..truth() };
        assert!(residuals_and_jacobian(&p, &clean(&truth())).is_err());
        assert!(lm_fit(&clean(&truth()), &p, &FitConfig::default()).is_err());
    }

    #[test]
    fn truth_init_is_already_optimal() {
        let p = truth();
        let r = lm_fit(&clean(&p), &p, &FitConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2, "{r:?}");
        for (a, b) in r.params.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbed_positions_are_recovered() {
        let p = truth();
        let init = FitModelParams { x1: p.x1 + 0.01, x2: p.x2 + 0.01, ..p };
        let r = lm_fit(&clean(&p), &init, &FitConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.params.center() - p.center()).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn merged_far_init_is_a_worse_local_minimum() {
        let p = FitModelParams { b: 1.0, x1: 0.3, x2: 0.7, w1: 0.03, w2: 0.03, c1: 0.1, c2: 0.1 };
        let s = clean(&p);
        let cfg = FitConfig::default();
        let good = lm_fit(&s, &p, &cfg).unwrap();
        let far = lm_fit(&s, &FitModelParams { x1: 0.9, x2: 0.9, ..p }, &cfg).unwrap();
        assert!(far.mse > good.mse * 1e6 + 1e-12, "far {} good {}", far.mse, good.mse);
        assert!((far.params.center() - p.center()).abs() > 0.003);
    }

    #[test]
    fn accepted_steps_decrease_mse() {
        let p = truth();
        let s = clean(&p);
        let init = FitModelParams { b: 0.97, x1: 0.36, x2: 0.6, w1: 0.06, w2: 0.02, c1: 0.03, c2: 0.12 };
        let (_, trace) = lm_fit_traced(&s, &init, &FitConfig::default()).unwrap();
        assert!(trace.len() > 2);
        assert!(trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn label_swap_gives_same_curve() {
        let p = truth();
        let s = clean(&p);
        let init = FitModelParams { b: 1.01, x1: 0.43, x2: 0.56, w1: 0.05, w2: 0.03, c1: 0.06, c2: 0.09 };
        let swapped = FitModelParams { x1: init.x2, x2: init.x1, w1: init.w2, w2: init.w1, c1: init.c2, c2: init.c1, ..init };
        let cfg = FitConfig::default();
        let a = lm_fit(&s, &init, &cfg).unwrap();
        let b = lm_fit(&s, &swapped, &cfg).unwrap();
        for x in s.grid().points() {
            assert!((a.params.eval(x) - b.params.eval(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_restart_equals_lm_fit() {
        let p = truth();
        let s = clean(&p);
        let prior = PriorConfig::default();
        let cfg = FitConfig { mc_restarts: 1, ..Default::default() };
        let mc = mc_fit(&s, 9, &cfg, &prior).unwrap();
        let direct = lm_fit(&s, &mc_init(9, 0, &prior), &cfg).unwrap();
        assert_eq!(mc, direct);
        assert_eq!(mc_fit(&s, 9, &FitConfig { mc_restarts: 8, ..cfg }, &prior).unwrap(), mc_fit(&s, 9, &FitConfig { mc_restarts: 8, ..cfg }, &prior).unwrap());
    }

    #[test]
    fn hybrid_from_good_prediction_recovers_truth() {
        let p = truth();
        let s = clean(&p);
        let mut t = TargetVector::from_params(&p.lineshape());
        t.center += 0.01;
        t.w1 *= 1.2;
        let pred = Prediction { mean: t, log_var: [-8.0; 5] };
        let r = hybrid_fit_from_prediction(&pred, &s, &FitConfig::default()).unwrap();
        for (a, b) in r.params.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn hybrid_contrast_seed() {
        let p = truth();
        let s = double_lorentzian(&p.lineshape(), &FrequencyGrid::standard());
        let t = TargetVector::from_params(&p.lineshape());
        let init = hybrid_init(&Prediction { mean: t, log_var: [0.0; 5] }, &s);
        let min = s.values().iter().copied().fold(f64::INFINITY, f64::min);
        let b = upper_quartile_mean(s.values());
        assert!((init.c1 - (1.0 - min / b)).abs() < 1e-15);
        assert!((init.c2 - t.rho * init.c1).abs() < 1e-15);
    }
}
