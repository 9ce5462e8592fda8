//! The sparse prior on the nuisance coefficients, built on the projected
//! design `W`:
//!
//! * model size: `pi(s) ∝ exp(-D s log p)` on `s_min..=s_max`;
//! * support given size: uniform over the full-rank size-`s` supports `Z_s`;
//! * coefficients given support: `f_S(u) ∝ exp(-eta |W_S u|)`.
//!
//! Substituting `v = (W_S^T W_S)^{1/2} u` turns the coefficient density into
//! the radial law `exp(-eta |v|)` on `R^s`, whose integral is
//! `2 pi^{s/2} Gamma(s) / (Gamma(s/2) eta^s)`. Hence
//!
//! ```text
//! log f_S(u) = -eta |W_S u| + s log eta + 1/2 log det(W_S^T W_S) - log(2 pi^{s/2} Gamma(s) / Gamma(s/2))
//! ```

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{self, binomial, ln_binomial, select_columns, Combinations};

use super::PosteriorConfig;

/// `log(2 pi^{s/2} Gamma(s) / Gamma(s/2))`, the radial normalizer; zero for `s = 0`.
pub fn log_radial_normalizer(s: usize) -> f64 {
    if s == 0 {
        return 0.0;
    }
    let s = s as f64;
    std::f64::consts::LN_2 + 0.5 * s * std::f64::consts::PI.ln() + ln_gamma(s) - ln_gamma(0.5 * s)
}

#[derive(Debug, Clone, Copy)]
pub struct SupportCount {
    pub log_count: f64,
    pub exact: bool,
}

/// Number of full-rank size-`s` supports among the columns of `w`.
///
/// Counted exactly when there are at most `budget` candidates; otherwise the
/// binomial coefficient stands in.
pub fn count_full_rank_supports(w: &DMatrix<f64>, s: usize, budget: u64) -> SupportCount {
    let cols = w.ncols();
    if s == 0 {
        return SupportCount {
            log_count: 0.0,
            exact: true,
        };
    }
    if binomial(cols, s) <= budget as f64 {
        let count = Combinations::new(cols, s)
            .filter(|sup| linalg::is_full_column_rank(&select_columns(w, sup)))
            .count();
        SupportCount {
            log_count: if count == 0 { f64::NEG_INFINITY } else { (count as f64).ln() },
            exact: true,
        }
    } else {
        log::warn!(
            "support count for s = {s} over {cols} columns exceeds the enumeration budget; using C({cols}, {s})"
        );
        SupportCount {
            log_count: ln_binomial(cols, s),
            exact: false,
        }
    }
}

/// Prior pieces that depend only on the configuration and `W`.
#[derive(Debug, Clone)]
pub struct SparsePrior {
    pub eta: f64,
    pub s_min: usize,
    pub s_max: usize,
    log_size: Vec<f64>,
    support_counts: Vec<Option<SupportCount>>,
    budget: u64,
}

impl SparsePrior {
    pub fn new(config: &PosteriorConfig, p: usize) -> Self {
        let log_p = (p as f64).ln();
        let raw: Vec<f64> = (0..=config.s_max)
            .map(|s| {
                if s < config.s_min {
                    f64::NEG_INFINITY
                } else {
                    -config.d * s as f64 * log_p
                }
            })
            .collect();
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + raw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Self {
            eta: config.eta_n,
            s_min: config.s_min,
            s_max: config.s_max,
            log_size: raw.iter().map(|v| v - log_norm).collect(),
            support_counts: vec![None; config.s_max + 1],
            budget: config.enumeration_budget,
        }
    }

    /// Normalized `log pi(s)`.
    pub fn log_size_prior(&self, s: usize) -> f64 {
        self.log_size.get(s).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn support_count(&mut self, w: &DMatrix<f64>, s: usize) -> SupportCount {
        if let Some(c) = self.support_counts[s] {
            return c;
        }
        let c = count_full_rank_supports(w, s, self.budget);
        self.support_counts[s] = Some(c);
        c
    }

    pub fn all_counts_exact(&self) -> bool {
        self.support_counts.iter().flatten().all(|c| c.exact)
    }

    /// `log f_S` given `|W_S u|` and `log det(W_S^T W_S)`.
    pub fn log_coef_density(&self, s: usize, fitted_norm: f64, log_det: f64) -> f64 {
        if s == 0 {
            return 0.0;
        }
        -self.eta * fitted_norm + s as f64 * self.eta.ln() + 0.5 * log_det - log_radial_normalizer(s)
    }

    /// Full log prior for a support of size `s`.
    pub fn log_prior_parts(&mut self, w: &DMatrix<f64>, s: usize, fitted_norm: f64, log_det: f64) -> f64 {
        let count = self.support_count(w, s).log_count;
        self.log_size_prior(s) - count + self.log_coef_density(s, fitted_norm, log_det)
    }
}

/// `log pi(|S|) - log |Z_|S|| + log f_S(b_S)` with `support` indexing the
/// columns of `w`.
pub fn log_prior(support: &[usize], b_s: &[f64], config: &PosteriorConfig, w: &DMatrix<f64>) -> Result<f64> {
    if support.len() != b_s.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a support of size {}",
            b_s.len(),
            support.len()
        )));
    }
    let s = support.len();
    if s > config.s_max {
        return Ok(f64::NEG_INFINITY);
    }
    let ws = select_columns(w, support);
    let log_det = linalg::log_det_gram(&ws).ok_or_else(|| Error::SupportInvalid {
        support: support.to_vec(),
    })?;
    let fitted = &ws * nalgebra::DVector::from_column_slice(b_s);
    let mut prior = SparsePrior::new(config, w.ncols() + 1);
    Ok(prior.log_prior_parts(w, s, fitted.norm(), log_det))
}
