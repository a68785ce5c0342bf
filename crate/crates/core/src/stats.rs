//! Small descriptive statistics used by the benchmarks and map reports.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{domain, Error, Result};

/// Mean of `values`; `NaN` when empty.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; `NaN` when empty.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Root mean square; `NaN` when empty.
pub fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fraction of errors with `|e| < threshold`. Non-finite errors count as
/// failures; an empty slice gives `NaN`.
pub fn success_rate(errors: &[f64], threshold: f64) -> f64 {
    let hits = errors.iter().filter(|e| e.abs() < threshold).count();
    hits as f64 / errors.len() as f64
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`
/// (1.96 for 95%).
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // the bounds touch 0 and 1 exactly at the extremes; rounding must not pull them in
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    (lo, hi)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain!("log-log slope needs at least two positive points"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values equal".into()));
    }
    Ok(sxy / sxx)
}

/// Equal-width histogram over `[lo, hi)`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Values that fell outside `[lo, hi]`.
    pub outside: u64,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }
}

pub fn histogram_range(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(domain!("histogram needs bins > 0 and lo < hi, got {bins} bins over [{lo}, {hi}]"));
    }
    let mut counts = vec![0u64; bins];
    let mut outside = 0;
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if !(v >= lo && v <= hi) {
            outside += 1;
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { lo, hi, counts, outside })
}

/// Histogram spanning the finite data range.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::Degenerate("histogram data has no spread".into()));
    }
    histogram_range(values, lo, hi, bins)
}

/// `amplitude * exp(-(x - mean)^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianFit {
    pub fn fwhm(&self) -> f64 {
        2.0 * (2.0 * core::f64::consts::LN_2).sqrt() * self.sigma
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.mean) / self.sigma;
        self.amplitude * (-0.5 * u * u).exp()
    }
}

/// Least-squares Gaussian fit to histogram counts.
///
/// Starts from the moments of the binned data and refines amplitude, mean
/// and sigma with a damped Gauss-Newton loop. Returns `None` when fewer than
/// three bins are populated.
pub fn gaussian_fit_histogram(h: &Histogram) -> Option<GaussianFit> {
    let xs: Vec<f64> = (0..h.counts.len()).map(|i| h.bin_center(i)).collect();
    let ys: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    if ys.iter().filter(|&&y| y > 0.0).count() < 3 {
        return None;
    }
    let total: f64 = ys.iter().sum();
    let m = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / total;
    let var = xs.iter().zip(&ys).map(|(x, y)| (x - m) * (x - m) * y).sum::<f64>() / total;
    let peak = ys.iter().copied().fold(0.0, f64::max);
    let mut p = [peak, m, var.sqrt().max(h.bin_width() * 0.25)];

    let sse = |p: &[f64; 3]| -> f64 {
        let g = GaussianFit { amplitude: p[0], mean: p[1], sigma: p[2] };
        xs.iter().zip(&ys).map(|(&x, &y)| (g.eval(x) - y).powi(2)).sum()
    };
    let mut cost = sse(&p);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&x, &y) in xs.iter().zip(&ys) {
            let u = (x - p[1]) / p[2];
            let e = (-0.5 * u * u).exp();
            let r = p[0] * e - y;
            let j = [e, p[0] * e * u / p[2], p[0] * e * u * u / p[2]];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-300);
            }
            let Some(step) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] - step[0], p[1] - step[1], (p[2] - step[2]).abs()];
            let c = sse(&trial);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p.iter().all(|v| v.is_finite()) && p[2] > 0.0).then_some(GaussianFit { amplitude: p[0], mean: p[1], sigma: p[2] })
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *o = det(&m) / d;
    }
    Some(out)
}

/// Standardized residual summary: `z = (e - mean(e)) / sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub n: usize,
    pub mean_error: f64,
    pub z_mean: f64,
    pub z_std: f64,
    /// Histogram of `z` over `[-5, 5]`.
    pub histogram: Histogram,
}

pub fn calibration(errors: &[f64], sigmas: &[f64]) -> Result<Calibration> {
    if errors.len() != sigmas.len() {
        return Err(Error::LengthMismatch { expected: errors.len(), got: sigmas.len() });
    }
    if errors.len() < 2 {
        return Err(domain!("calibration needs at least two samples"));
    }
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(domain!("predicted sigmas must be positive"));
    }
    let mean_error = mean(errors);
    let z: Vec<f64> = errors.iter().zip(sigmas).map(|(e, s)| (e - mean_error) / s).collect();
    Ok(Calibration {
        n: z.len(),
        mean_error,
        z_mean: mean(&z),
        z_std: std_dev(&z),
        histogram: histogram_range(&z, -5.0, 5.0, 50)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn basic_moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((std_dev(&v) - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((rms(&[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn success_rate_counts_strictly_below() {
        let e = [0.001, -0.002, 0.003, f64::NAN, 0.5];
        assert_eq!(success_rate(&e, 0.003), 0.4);
        assert_eq!(success_rate(&e, 1.0), 0.8);
    }

    #[test]
    fn wilson_reference_values() {
        // 8/10 at 95%: (0.4902, 0.9433)
        let (lo, hi) = wilson_interval(8, 10, 1.959964);
        assert!((lo - 0.4902).abs() < 1e-4 && (hi - 0.9433).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 0, 1.96);
        assert_eq!((lo, hi), (0.0, 1.0));
        let (_, hi) = wilson_interval(50, 50, 1.96);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [2.0, 3.5, 5.0, 7.0, 10.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 0.3 * v.powf(-1.0)).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = histogram_range(&[0.0, 0.5, 1.0, 1.5, -0.1], 0.0, 1.0, 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.outside, 2);
        assert!(histogram(&[1.0, 1.0], 4).is_err());
    }

    #[test]
    fn gaussian_fit_recovers_fwhm() {
        let mut rng = stream(5, 0, 0);
        let d = Normal::new(2870.0, 0.2).unwrap();
        let v: Vec<f64> = (0..40_000).map(|_| d.sample(&mut rng)).collect();
        let h = histogram(&v, 60).unwrap();
        let g = gaussian_fit_histogram(&h).unwrap();
        let want = 2.0 * (2.0 * 2f64.ln()).sqrt() * 0.2;
        assert!((g.fwhm() / want - 1.0).abs() < 0.03, "{}", g.fwhm());
        assert!((g.mean - 2870.0).abs() < 0.01);
    }

    #[test]
    fn calibrated_stub_has_unit_z() {
        let mut rng = stream(9, 0, 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let sig: Vec<f64> = (0..10_000).map(|i| 0.001 * (1.0 + (i % 7) as f64)).collect();
        let err: Vec<f64> = sig.iter().map(|s| s * n.sample(&mut rng)).collect();
        let c = calibration(&err, &sig).unwrap();
        assert!((0.95..=1.05).contains(&c.z_std), "{}", c.z_std);
        let doubled: Vec<f64> = sig.iter().map(|s| 2.0 * s).collect();
        let c2 = calibration(&err, &doubled).unwrap();
        assert!((c2.z_std - c.z_std / 2.0).abs() < 1e-12);
        assert!(calibration(&err[..1], &sig[..1]).is_err());
    }
}
