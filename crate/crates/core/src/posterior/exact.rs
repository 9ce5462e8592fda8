//! Quadrature ground truth for the model posterior when every model has at
//! most two nuisance coefficients.
//!
//! For each support `S` the marginal `∫ exp(-|y - W_S u|^2 / 2) f_S(u) du` is
//! integrated by adaptive Gauss-Kronrod (nested in two dimensions) after
//! shifting the log integrand by its largest value on the segment from `0` to
//! the least-squares fit. The box spans both `0` (the prior's kink) and the
//! least-squares point with twelve likelihood standard deviations either side.

use serde::{Deserialize, Serialize};

use crate::diagnostics::DesignDiagnostics;
use crate::error::{Error, Result};
use crate::linalg::{self, column, dot, norm_sq, select_columns, Combinations};
use crate::model::RegressionInstance;
use crate::quadrature::integrate;

use super::prior::SparsePrior;
use super::PosteriorConfig;

/// Largest `p` accepted.
pub const MAX_P: usize = 10;
const HALF_WIDTH_SDS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProbability {
    /// Sorted support in coordinates of `X` (all >= 1).
    pub support: Vec<usize>,
    pub probability: f64,
    pub log_marginal: f64,
    /// Posterior mean of `b_S` given `S`.
    pub mean_coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTable {
    pub models: Vec<ModelProbability>,
    /// `E[sum gamma_i b_i | Y]`.
    pub mean_shift: f64,
}

impl ModelTable {
    pub fn probability_of(&self, support: &[usize]) -> f64 {
        self.models
            .iter()
            .find(|m| m.support == support)
            .map_or(0.0, |m| m.probability)
    }

    /// Posterior probability of each model size `0..=max`.
    pub fn size_probabilities(&self) -> Vec<f64> {
        let max = self.models.iter().map(|m| m.support.len()).max().unwrap_or(0);
        let mut out = vec![0.0; max + 1];
        for m in &self.models {
            out[m.support.len()] += m.probability;
        }
        out
    }
}

struct Integrals {
    /// Log of the integral of `exp(l)`.
    log_mass: f64,
    means: Vec<f64>,
}

fn one_dim(wj: &[f64], y: &[f64], eta: f64, log_const: f64, q: &QuadratureOptions) -> Integrals {
    let g = norm_sq(wj);
    let c = dot(wj, y);
    let norm = g.sqrt();
    let y_sq = norm_sq(y);
    let ell = |u: f64| -0.5 * (y_sq - 2.0 * u * c + u * u * g) - eta * norm * u.abs() + log_const;
    let u_ls = c / g;
    let shift = segment_max(|t| ell(t * u_ls));
    let sd = 1.0 / norm;
    let a = u_ls.min(0.0) - HALF_WIDTH_SDS * sd;
    let b = u_ls.max(0.0) + HALF_WIDTH_SDS * sd;
    let bps = [0.0, u_ls];
    let mass = integrate(|u| (ell(u) - shift).exp(), a, b, &bps, q.abs_tol, q.rel_tol);
    let first = integrate(|u| u * (ell(u) - shift).exp(), a, b, &bps, q.abs_tol, q.rel_tol);
    Integrals {
        log_mass: shift + mass.ln(),
        means: vec![first / mass],
    }
}

fn two_dim(w1: &[f64], w2: &[f64], y: &[f64], eta: f64, log_const: f64, q: &QuadratureOptions) -> Integrals {
    let (g11, g12, g22) = (norm_sq(w1), dot(w1, w2), norm_sq(w2));
    let (c1, c2) = (dot(w1, y), dot(w2, y));
    let y_sq = norm_sq(y);
    let det = g11 * g22 - g12 * g12;
    let quad = move |u1: f64, u2: f64| u1 * u1 * g11 + 2.0 * u1 * u2 * g12 + u2 * u2 * g22;
    let ell = move |u1: f64, u2: f64| {
        -0.5 * (y_sq - 2.0 * (u1 * c1 + u2 * c2) + quad(u1, u2)) - eta * quad(u1, u2).max(0.0).sqrt() + log_const
    };
    let u1_ls = (g22 * c1 - g12 * c2) / det;
    let u2_ls = (g11 * c2 - g12 * c1) / det;
    let shift = segment_max(|t| ell(t * u1_ls, t * u2_ls));
    let sd1 = (g22 / det).sqrt();
    let sd2 = 1.0 / g22.sqrt();
    let a1 = u1_ls.min(0.0) - HALF_WIDTH_SDS * sd1;
    let b1 = u1_ls.max(0.0) + HALF_WIDTH_SDS * sd1;

    let inner = |u1: f64, moment: usize| {
        let u2_cond = (c2 - g12 * u1) / g22;
        let u2_kink = -g12 * u1 / g22;
        let a2 = u2_cond.min(u2_kink) - HALF_WIDTH_SDS * sd2;
        let b2 = u2_cond.max(u2_kink) + HALF_WIDTH_SDS * sd2;
        integrate(
            |u2| {
                let w = (ell(u1, u2) - shift).exp();
                match moment {
                    0 => w,
                    1 => u1 * w,
                    _ => u2 * w,
                }
            },
            a2,
            b2,
            &[u2_kink, u2_cond],
            q.abs_tol,
            q.rel_tol,
        )
    };
    let outer = |moment: usize| integrate(|u1| inner(u1, moment), a1, b1, &[0.0, u1_ls], q.abs_tol, q.rel_tol);
    let mass = outer(0);
    Integrals {
        log_mass: shift + mass.ln(),
        means: vec![outer(1) / mass, outer(2) / mass],
    }
}

fn segment_max(f: impl Fn(f64) -> f64) -> f64 {
    (0..=20).map(|k| f(k as f64 / 20.0)).fold(f64::NEG_INFINITY, f64::max)
}

/// Normalized posterior model probabilities over all supports of size
/// `s_min..=s_max`. Requires `p <= 10` and `s_max <= 2`.
pub fn enumerate_posterior_exact(
    instance: &RegressionInstance,
    diagnostics: &DesignDiagnostics,
    config: &PosteriorConfig,
    quad: &QuadratureOptions,
) -> Result<ModelTable> {
    if instance.p > MAX_P || config.s_max > 2 {
        return Err(Error::Refused(format!(
            "needs p <= {MAX_P} and s_max <= 2, got p = {} and s_max = {}",
            instance.p, config.s_max
        )));
    }
    config.validate(instance.p)?;
    let w = &diagnostics.w;
    let cols = w.ncols();
    let x1 = instance.column(0);
    let proj = dot(x1, instance.y.as_slice()) / norm_sq(x1);
    let y: Vec<f64> = instance.y.iter().zip(x1).map(|(v, x)| v - proj * x).collect();
    let mut prior = SparsePrior::new(config, instance.p);

    let mut rows = Vec::new();
    for s in config.s_min..=config.s_max.min(cols) {
        let supports: Vec<Vec<usize>> = if s == 0 {
            vec![vec![]]
        } else {
            Combinations::new(cols, s).collect()
        };
        for sup in supports {
            let Some(log_det) = linalg::log_det_gram(&select_columns(w, &sup)) else {
                continue;
            };
            // prior terms other than the exp(-eta |W_S u|) factor
            let log_const = prior.log_prior_parts(w, s, 0.0, log_det);
            let res = match s {
                0 => Integrals {
                    log_mass: -0.5 * norm_sq(&y) + log_const,
                    means: vec![],
                },
                1 => one_dim(column(w, sup[0]), &y, prior.eta, log_const, quad),
                _ => two_dim(column(w, sup[0]), column(w, sup[1]), &y, prior.eta, log_const, quad),
            };
            rows.push((sup, res));
        }
    }
    let max = rows.iter().map(|(_, r)| r.log_mass).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = rows.iter().map(|(_, r)| (r.log_mass - max).exp()).sum();
    let mut mean_shift = 0.0;
    let models = rows
        .into_iter()
        .map(|(sup, r)| {
            let probability = (r.log_mass - max).exp() / total;
            mean_shift += probability
                * sup
                    .iter()
                    .zip(&r.means)
                    .map(|(&j, &m)| diagnostics.gamma[j] * m)
                    .sum::<f64>();
            ModelProbability {
                support: sup.iter().map(|j| j + 1).collect(),
                probability,
                log_marginal: r.log_mass,
                mean_coefs: r.means,
            }
        })
        .collect();
    Ok(ModelTable { models, mean_shift })
}
