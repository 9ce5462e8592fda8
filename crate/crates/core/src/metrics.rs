//! Distances from posterior draws to the standard normal, credible
//! intervals and interval coverage.
//!
//! The bounded-Lipschitz distance has no closed form against an empirical
//! measure. Every bounded 1-Lipschitz test function is 1-Lipschitz, so
//! `BL <= W1`, and `BL <= 2` by boundedness; `bl_upper = min(W1, 2)` is the
//! reported certified bound, alongside Kolmogorov-Smirnov.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub w1: f64,
    pub ks: f64,
    pub bl_upper: f64,
    pub n_samples: usize,
}

fn sorted(draws: &[f64]) -> Vec<f64> {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `int |F_m(x) - Phi(x)| dx` for sorted `x`, exactly, piece by piece
/// between order statistics.
pub fn wasserstein1_to_normal_sorted(x: &[f64]) -> f64 {
    let m = x.len();
    if m == 0 {
        return f64::NAN;
    }
    let g = normal::cdf_integral;
    let first = x[0];
    let last = x[m - 1];
    let mut total = g(first);
    total += normal::pdf(last) - last * normal::sf(last);
    for i in 1..m {
        let (a, b) = (x[i - 1], x[i]);
        if b <= a {
            continue;
        }
        let c = i as f64 / m as f64;
        let (fa, fb) = (normal::cdf(a), normal::cdf(b));
        total += if fa >= c {
            g(b) - g(a) - c * (b - a)
        } else if fb <= c {
            c * (b - a) - (g(b) - g(a))
        } else {
            let q = normal::quantile(c).clamp(a, b);
            (c * (q - a) - (g(q) - g(a))) + ((g(b) - g(q)) - c * (b - q))
        };
    }
    total
}

pub fn ks_to_normal_sorted(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal::cdf(v);
            ((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

pub fn distance_to_standard_normal(draws: &[f64]) -> Result<DistanceReport> {
    if draws.len() < MIN_DRAWS {
        return Err(Error::SampleSize {
            needed: MIN_DRAWS,
            got: draws.len(),
        });
    }
    let x = sorted(draws);
    let w1 = wasserstein1_to_normal_sorted(&x);
    Ok(DistanceReport {
        w1,
        ks: ks_to_normal_sorted(&x),
        bl_upper: w1.min(2.0),
        n_samples: x.len(),
    })
}

/// `int |F_a - F_b| dx` between two empirical measures.
pub fn wasserstein1_empirical(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = f64::NEG_INFINITY;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if prev.is_finite() {
            let diff = (i as f64 / na - j as f64 / nb).abs();
            total += diff * (next - prev);
        }
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let m = x.len();
    if m == 1 {
        return x[0];
    }
    let h = (m - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Equal-tailed empirical interval.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < MIN_DRAWS {
        return Err(Error::SampleSize {
            needed: MIN_DRAWS,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must be in (0, 1), got {level}")));
    }
    let x = sorted(samples);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&x, tail), quantile_sorted(&x, 1.0 - tail)))
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageItem {
    pub truth: f64,
    pub freq: (f64, f64),
    pub bayes: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nominal: f64,
    pub empirical_freq: f64,
    pub empirical_bayes: Option<f64>,
    pub n_reps: usize,
    pub avg_widths: (f64, Option<f64>),
}

fn covers(iv: (f64, f64), truth: f64) -> bool {
    iv.0 <= truth && truth <= iv.1
}

/// Coverage fractions and mean widths. The Bayes columns are `None` unless
/// every item carries a credible interval.
pub fn coverage(items: &[CoverageItem], nominal: f64) -> CoverageReport {
    let m = items.len() as f64;
    let freq = items.iter().filter(|it| covers(it.freq, it.truth)).count() as f64 / m;
    let freq_w = items.iter().map(|it| it.freq.1 - it.freq.0).sum::<f64>() / m;
    let bayes: Option<Vec<(f64, f64)>> = items.iter().map(|it| it.bayes).collect();
    let (eb, bw) = match bayes {
        Some(b) if !b.is_empty() => (
            Some(
                b.iter()
                    .zip(items)
                    .filter(|(iv, it)| covers(**iv, it.truth))
                    .count() as f64
                    / m,
            ),
            Some(b.iter().map(|iv| iv.1 - iv.0).sum::<f64>() / m),
        ),
        _ => (None, None),
    };
    CoverageReport {
        nominal,
        empirical_freq: freq,
        empirical_bayes: eb,
        n_reps: items.len(),
        avg_widths: (freq_w, bw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata(m: usize) -> Vec<f64> {
        (0..m)
            .map(|i| normal::quantile((i as f64 + 0.5) / m as f64))
            .collect()
    }

    #[test]
    fn stratified_sample_is_close() {
        let d = distance_to_standard_normal(&strata(10_000)).unwrap();
        assert!(d.w1 <= 1e-3, "{}", d.w1);
        assert!(d.ks <= 0.5 / 10_000.0 + 1e-12);
        assert_eq!(d.bl_upper, d.w1);
    }

    #[test]
    fn shift_moves_w1_by_shift() {
        let shifted: Vec<f64> = strata(10_000).iter().map(|v| v + 1.0).collect();
        let d = distance_to_standard_normal(&shifted).unwrap();
        assert!((d.w1 - 1.0).abs() < 1e-3, "{}", d.w1);
    }

    #[test]
    fn far_draws_cap_bl_bound() {
        let far: Vec<f64> = strata(200).iter().map(|v| v + 10.0).collect();
        let d = distance_to_standard_normal(&far).unwrap();
        assert!(d.w1 > 9.0);
        assert_eq!(d.bl_upper, 2.0);
        assert!(d.ks <= 1.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let x = strata(150);
        assert_eq!(wasserstein1_empirical(&x, &x), 0.0);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(
            distance_to_standard_normal(&[0.0; 50]),
            Err(Error::SampleSize { .. })
        ));
    }

    #[test]
    fn constant_samples_interval() {
        let iv = credible_interval(&[2.5; 200], 0.9).unwrap();
        assert_eq!(iv, (2.5, 2.5));
        assert!(credible_interval(&[0.0; 200], 1.0).is_err());
    }

    #[test]
    fn coverage_extremes() {
        let all = vec![
            CoverageItem {
                truth: 1.0,
                freq: (f64::NEG_INFINITY, f64::INFINITY),
                bayes: Some((f64::NEG_INFINITY, f64::INFINITY)),
            };
            5
        ];
        let r = coverage(&all, 0.95);
        assert_eq!(r.empirical_freq, 1.0);
        assert_eq!(r.empirical_bayes, Some(1.0));
        let none = vec![
            CoverageItem {
                truth: 1.0,
                freq: (2.0, 3.0),
                bayes: None,
            };
            5
        ];
        let r = coverage(&none, 0.95);
        assert_eq!(r.empirical_freq, 0.0);
        assert_eq!(r.empirical_bayes, None);
        assert_eq!(r.avg_widths.0, 1.0);
    }
}
