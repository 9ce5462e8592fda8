//! Standard normal CDF, density and quantile.

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `Phi^{-1}(p)`, refined by Newton steps until the update is below 1e-12.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = Normal::standard().inverse_cdf(p);
    for _ in 0..8 {
        let f = if p < 0.5 { cdf(x) - p } else { (1.0 - p) - sf(x) };
        let d = pdf(x);
        if d == 0.0 {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    x
}

/// Antiderivative of `Phi`: `x Phi(x) + phi(x)`.
pub fn cdf_integral(x: f64) -> f64 {
    x * cdf(x) + pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-14);
        assert!((sf(5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn antiderivative_matches_quadrature() {
        let (a, b) = (-1.3, 0.8);
        let m = 20_000;
        let h = (b - a) / m as f64;
        let simpson: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * cdf(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((cdf_integral(b) - cdf_integral(a) - simpson).abs() < 1e-12);
    }
}
