//! Sample statistics the adversary uses to decide when it has duplicated a
//! query often enough: noise-family identification and 95% confidence
//! intervals for the population mean.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mechanisms::sample_laplace;
use crate::rng::seeded;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// 0.975 quantile of the standard Laplace distribution, `-ln(0.05)`.
pub const LAPLACE_975: f64 = 2.995_732_273_553_991;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub family: NoiseFamily,
    pub laplace_scale: f64,
    pub gaussian_scale: f64,
    pub ks_laplace: f64,
    pub ks_gaussian: f64,
    /// Set when the samples have no spread at all.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CIResult {
    pub distribution: NoiseFamily,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
}

impl CIResult {
    fn new(distribution: NoiseFamily, lower: f64, upper: f64) -> Self {
        Self { distribution, lower, upper, length: upper - lower }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Which quantiles `X_α` scale the mean absolute deviation in the Laplace
/// interval `[X̃ - X_.975·d̄, X̃ - X_.025·d̄]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplaceCalibration {
    /// Quantiles of the pivot `(X̃ - μ)/d̄` at the actual sample size, so the
    /// interval has 95% coverage.
    #[default]
    Pivotal,
    /// Quantiles of the standard Laplace distribution itself (`±ln 20`).
    /// The interval does not shrink with the sample size and over-covers.
    StandardLaplace,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    median_in_place(&mut v)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

fn mean_abs_dev_from(xs: &[f64], center: f64) -> f64 {
    xs.iter().map(|x| (x - center).abs()).sum::<f64>() / xs.len() as f64
}

fn require(samples: &[f64], needed: usize) -> Result<()> {
    if samples.len() < needed {
        return Err(Error::InsufficientSamples { needed, got: samples.len() });
    }
    Ok(())
}

/// Centers on the sample median, fits each family's scale by maximum
/// likelihood and picks the family with the smaller Kolmogorov–Smirnov
/// distance. Constant samples report Gaussian with zero scale and the
/// `degenerate` flag.
pub fn hypothesis_test_noise(samples: &[f64]) -> Result<NoiseFit> {
    require(samples, 8)?;
    let med = median(samples);
    let mut centered: Vec<f64> = samples.iter().map(|x| x - med).collect();
    let n = centered.len() as f64;
    let laplace_scale = centered.iter().map(|c| c.abs()).sum::<f64>() / n;
    let gaussian_scale = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    if gaussian_scale == 0.0 {
        return Ok(NoiseFit {
            family: NoiseFamily::Gaussian,
            laplace_scale: 0.0,
            gaussian_scale: 0.0,
            ks_laplace: 0.0,
            ks_gaussian: 0.0,
            degenerate: true,
        });
    }
    centered.sort_by(f64::total_cmp);
    let ks_laplace = ks_statistic(&centered, |x| laplace_cdf(x, laplace_scale));
    let normal = Normal::new(0.0, gaussian_scale).expect("positive scale");
    let ks_gaussian = ks_statistic(&centered, |x| normal.cdf(x));
    let family = if ks_laplace < ks_gaussian { NoiseFamily::Laplace } else { NoiseFamily::Gaussian };
    Ok(NoiseFit { family, laplace_scale, gaussian_scale, ks_laplace, ks_gaussian, degenerate: false })
}

fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// One-sample KS distance between sorted data and a continuous CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// 95% interval for the mean of Laplace samples:
/// `[X̃ - X_.975·d̄, X̃ - X_.025·d̄]` with `X̃` the median and `d̄` the mean
/// absolute deviation about it.
pub fn ci_laplace(samples: &[f64]) -> Result<CIResult> {
    ci_laplace_with(samples, LaplaceCalibration::Pivotal)
}

pub fn ci_laplace_with(samples: &[f64], calibration: LaplaceCalibration) -> Result<CIResult> {
    require(samples, 2)?;
    let med = median(samples);
    let spread = mean_abs_dev_from(samples, med);
    let (q_lo, q_hi) = match calibration {
        LaplaceCalibration::StandardLaplace => (-LAPLACE_975, LAPLACE_975),
        LaplaceCalibration::Pivotal => {
            let q = laplace_pivot_quantile(samples.len());
            (-q, q)
        }
    };
    Ok(CIResult::new(NoiseFamily::Laplace, med - q_hi * spread, med - q_lo * spread))
}

/// 95% interval for the mean of Gaussian samples: `X̄ ± z_.975 · s/√n`.
pub fn ci_gaussian(samples: &[f64]) -> Result<CIResult> {
    require(samples, 2)?;
    let m = mean(samples);
    let half = Z_975 * sample_std(samples) / (samples.len() as f64).sqrt();
    Ok(CIResult::new(NoiseFamily::Gaussian, m - half, m + half))
}

pub fn ci_for(family: NoiseFamily, samples: &[f64], calibration: LaplaceCalibration) -> Result<CIResult> {
    match family {
        NoiseFamily::Laplace => ci_laplace_with(samples, calibration),
        NoiseFamily::Gaussian => ci_gaussian(samples),
    }
}

/// Largest sample size whose pivot quantile is simulated directly; beyond
/// it the quantile is extrapolated with the `1/√n` rate of the median.
const PIVOT_SIMULATION_MAX_N: usize = 512;
const PIVOT_REPLICATES: usize = 20_000;
const PIVOT_SEED: u64 = 0x51D_E5EED;

/// 0.975 quantile of `T = (X̃ - μ)/d̄` for `n` Laplace samples.
///
/// `T` is location- and scale-free and symmetric, so one table per `n`
/// serves every interval; values are simulated once with a fixed seed and
/// memoised.
pub fn laplace_pivot_quantile(n: usize) -> f64 {
    assert!(n >= 2, "pivot needs at least two samples");
    if n > PIVOT_SIMULATION_MAX_N {
        let base = laplace_pivot_quantile(PIVOT_SIMULATION_MAX_N);
        return base * (PIVOT_SIMULATION_MAX_N as f64 / n as f64).sqrt();
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&q) = cache.lock().expect("pivot cache").get(&n) {
        return q;
    }
    let q = simulate_pivot_quantile(n);
    cache.lock().expect("pivot cache").insert(n, q);
    q
}

fn simulate_pivot_quantile(n: usize) -> f64 {
    let mut rng = seeded(PIVOT_SEED ^ n as u64);
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..PIVOT_REPLICATES)
        .map(|_| {
            buf.iter_mut().for_each(|v| *v = sample_laplace(1.0, &mut rng));
            let med = median_in_place(&mut buf.clone());
            let spread = mean_abs_dev_from(&buf, med);
            if spread > 0.0 {
                (med / spread).abs()
            } else {
                0.0
            }
        })
        .collect();
    // |T| at 0.95 equals T at 0.975 by symmetry.
    let k = ((0.95 * PIVOT_REPLICATES as f64).ceil() as usize).min(PIVOT_REPLICATES) - 1;
    let (_, q, _) = stats.select_nth_unstable_by(k, f64::total_cmp);
    *q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal as NormalDist};

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[-1.0, 1.0]), 0.0);
    }

    #[test]
    fn literal_laplace_interval_by_hand() {
        // median 0, mean |x - 0| = 1, bounds ±ln 20
        let ci = ci_laplace_with(&[-1.0, 1.0], LaplaceCalibration::StandardLaplace).unwrap();
        assert!((ci.lower + 2.9957).abs() < 1e-4 && (ci.upper - 2.9957).abs() < 1e-4);
        assert!((LAPLACE_975 - 20f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_samples_give_zero_length() {
        let xs = [0.3; 16];
        for ci in [ci_laplace(&xs).unwrap(), ci_gaussian(&xs).unwrap()] {
            assert!((ci.lower - 0.3).abs() < 1e-15 && (ci.upper - 0.3).abs() < 1e-15);
            assert!(ci.length < 1e-15);
        }
    }

    #[test]
    fn gaussian_interval_by_hand() {
        // mean 0, s = √2, length 2·1.96·√2/√2
        let ci = ci_gaussian(&[-1.0, 1.0]).unwrap();
        assert!((ci.length - 2.0 * Z_975).abs() < 1e-12);
        assert!((ci.length - 3.92).abs() < 1e-3);
    }

    #[test]
    fn too_few_samples() {
        assert!(ci_laplace(&[1.0]).is_err());
        assert!(ci_gaussian(&[]).is_err());
        assert!(hypothesis_test_noise(&[1.0; 7]).is_err());
    }

    #[test]
    fn identical_samples_are_degenerate_gaussian() {
        let fit = hypothesis_test_noise(&[2.5; 8]).unwrap();
        assert_eq!(fit.family, NoiseFamily::Gaussian);
        assert!(fit.degenerate);
        assert_eq!(fit.gaussian_scale, 0.0);
    }

    #[test]
    fn family_identification_rates() {
        let mut laplace_hits = 0;
        let mut gaussian_hits = 0;
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        for trial in 0..100 {
            let mut rng = seeded(1000 + trial);
            let lap: Vec<f64> = (0..10_000).map(|_| 0.4 + sample_laplace(0.7, &mut rng)).collect();
            let gau: Vec<f64> = (0..10_000).map(|_| -2.0 + 0.3 * normal.sample(&mut rng)).collect();
            laplace_hits += usize::from(hypothesis_test_noise(&lap).unwrap().family == NoiseFamily::Laplace);
            gaussian_hits += usize::from(hypothesis_test_noise(&gau).unwrap().family == NoiseFamily::Gaussian);
        }
        assert!(laplace_hits >= 95, "laplace {laplace_hits}/100");
        assert!(gaussian_hits >= 95, "gaussian {gaussian_hits}/100");
    }

    #[test]
    fn pivot_quantile_shrinks_like_inverse_sqrt() {
        let q16 = laplace_pivot_quantile(16);
        let q256 = laplace_pivot_quantile(256);
        assert!(q16 > q256);
        // asymptotically 1.96/√n; allow small-sample excess
        let ratio = q256 * 16.0 / Z_975;
        assert!((0.9..1.2).contains(&ratio), "ratio {ratio}");
        assert_eq!(laplace_pivot_quantile(16), q16);
    }

    #[test]
    fn ks_statistic_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_statistic(&xs, |x| x.clamp(0.0, 1.0)) <= 0.5 / n as f64 + 1e-12);
    }
}
