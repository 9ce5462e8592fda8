//! Posterior for the first coordinate under the factorized prior.
//!
//! With `H` the projection onto `span(X_1)`, `W = (I - H) X_{-1}` and
//! `b1* = b_1 + sum_{i>=2} gamma_i b_i`, the Gaussian likelihood splits into
//! a factor in `b1*` (driven by `H Y`) and a factor in `b_{-1}` (driven by
//! `(I - H) Y` and `W`). Independent priors on the two blocks therefore give
//! independent posteriors:
//!
//! * `b1* | Y` is Gaussian in closed form ([`b1star_posterior`]);
//! * `b_{-1} | Y` follows the sparse prior on `W` and is sampled by
//!   Metropolis-Hastings over `(S, b_S)` ([`run_chain`]).
//!
//! Each kept draw pairs a chain state with a fresh `b1*` and maps back via
//! `b_1 = b1* - sum gamma_i b_i`.

mod exact;
mod prior;
mod sampler;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::debias::EstimateReport;
use crate::diagnostics::DesignDiagnostics;
use crate::error::{Error, Result};
use crate::linalg::{column, dot, norm_sq};
use crate::model::RegressionInstance;

pub use exact::{enumerate_posterior_exact, ModelProbability, ModelTable, QuadratureOptions, MAX_P};
pub use prior::{count_full_rank_supports, log_prior, log_radial_normalizer, SparsePrior, SupportCount};
pub use sampler::{run_chain, AuditEntry, ChainOutput, MoveKind, MoveStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Iterations after burn-in.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 2_000,
            thin: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub add: f64,
    pub remove: f64,
    pub swap: f64,
    pub within: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            add: 0.25,
            remove: 0.25,
            swap: 0.2,
            within: 0.3,
        }
    }
}

impl MoveProbs {
    fn as_array(&self) -> [f64; 4] {
        [self.add, self.remove, self.swap, self.within]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    /// Model-size penalty `D`.
    pub d: f64,
    /// Coefficient-density scale.
    pub eta_n: f64,
    /// Prior variance of `b1*`.
    pub sigma_n_sq: f64,
    pub s_max: usize,
    /// Smallest allowed model; nonzero forces inclusion.
    #[serde(default)]
    pub s_min: usize,
    pub chain: ChainConfig,
    pub move_probs: MoveProbs,
    /// Between-model coefficient proposals use sd `proposal_scale / |W_j|`.
    pub proposal_scale: f64,
    /// Exact `|Z_s|` counting up to this many candidate supports.
    pub enumeration_budget: u64,
    /// Starting support as 0-based columns of `X` (all >= 1).
    #[serde(default)]
    pub init_support: Option<Vec<usize>>,
    /// Record an acceptance-ratio audit every this many iterations (0 = off).
    #[serde(default)]
    pub audit_every: usize,
    /// Consecutive rank-deficient proposals tolerated before giving up.
    pub stuck_limit: usize,
}

impl PosteriorConfig {
    /// Defaults tied to the instance: `sigma_n^2 = n`, `D = 2`,
    /// `eta_n = 2 n lambda_n / mean_j |W_j|`, `s_max = min(p - 1, 20)`.
    pub fn defaults_for(instance: &RegressionInstance, diagnostics: &DesignDiagnostics) -> Self {
        Self {
            d: 2.0,
            eta_n: default_eta_n(instance, diagnostics),
            sigma_n_sq: instance.n as f64,
            s_max: (instance.p - 1).min(20),
            s_min: 0,
            chain: ChainConfig::default(),
            move_probs: MoveProbs::default(),
            proposal_scale: 1.0,
            enumeration_budget: 50_000,
            init_support: None,
            audit_every: 0,
            stuck_limit: 10_000,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.d > 0.0) || !(self.eta_n > 0.0) || !(self.sigma_n_sq > 0.0) {
            return Err(Error::Config("D, eta_n and sigma_n^2 must be positive".into()));
        }
        if p < 2 || self.s_max > p - 1 {
            return Err(Error::Config(format!("s_max = {} exceeds p - 1 = {}", self.s_max, p.saturating_sub(1))));
        }
        if self.s_min > self.s_max {
            return Err(Error::Config("s_min exceeds s_max".into()));
        }
        let probs = self.move_probs.as_array();
        if probs.iter().any(|v| !(*v >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("move probabilities must be >= 0 and sum to 1".into()));
        }
        if self.chain.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if !(self.proposal_scale > 0.0) {
            return Err(Error::Config("proposal_scale must be positive".into()));
        }
        if let Some(init) = &self.init_support {
            if init.iter().any(|&j| j == 0 || j >= p) {
                return Err(Error::Config("init_support indices must lie in 1..p".into()));
            }
        }
        Ok(())
    }
}

/// `2 n lambda_n / mean_j |W_j|`: the lasso scale `2 n lambda_n` expressed per
/// unit of `|W_S u|`.
pub fn default_eta_n(instance: &RegressionInstance, diagnostics: &DesignDiagnostics) -> f64 {
    let cols = diagnostics.w.ncols().max(1);
    let mean_norm = (0..diagnostics.w.ncols())
        .map(|j| norm_sq(column(&diagnostics.w, j)).sqrt())
        .sum::<f64>()
        / cols as f64;
    let base = 2.0 * instance.n as f64 * diagnostics.lambda_n;
    if mean_norm > 0.0 {
        base / mean_norm
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    /// Sorted support in coordinates of `X` (all >= 1).
    pub support: Vec<usize>,
    pub b_s: Vec<f64>,
    pub b1_star: f64,
    pub b1: f64,
    pub log_target: f64,
}

impl PosteriorSample {
    /// `b1* - b1 = sum gamma_i b_i` recomputed from the stored nuisance part.
    pub fn shift(&self, gamma: &DVector<f64>) -> f64 {
        self.support
            .iter()
            .zip(&self.b_s)
            .map(|(&j, &b)| gamma[j - 1] * b)
            .sum()
    }

    /// Dense coefficient vector of length `p`, with `b1` first.
    pub fn dense(&self, p: usize) -> DVector<f64> {
        let mut v = DVector::zeros(p);
        v[0] = self.b1;
        for (&j, &b) in self.support.iter().zip(&self.b_s) {
            v[j] = b;
        }
        v
    }
}

/// `b1* | Y ~ N(v X_1^T Y, v)` with `v = sigma^2 / (1 + |X_1|^2 sigma^2)`.
pub fn b1star_posterior(instance: &RegressionInstance, sigma_n_sq: f64) -> Result<(f64, f64)> {
    let x1 = instance.column(0);
    let x1_sq = norm_sq(x1);
    if !(x1_sq > 0.0) {
        return Err(Error::DegenerateDesign("|X_1| = 0".into()));
    }
    if !(sigma_n_sq > 0.0) {
        return Err(Error::Config("sigma_n^2 must be positive".into()));
    }
    let var = sigma_n_sq / (1.0 + x1_sq * sigma_n_sq);
    Ok((var * dot(x1, instance.y.as_slice()), var))
}

/// `sqrt(sigma^2 |X_1|^2 / (1 + sigma^2 |X_1|^2))`.
pub fn tau_n(x1_norm: f64, sigma_n_sq: f64) -> f64 {
    let a = sigma_n_sq * x1_norm * x1_norm;
    (a / (1.0 + a)).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Conditional mean of `|X_1| (b_1 - beta1_hat)` given each draw's `b_{-1}`.
    pub nu_n_draws: Vec<f64>,
    pub tau_n: f64,
    /// Posterior fraction with `|b - beta|_1 > c3 s* lambda_n`.
    pub l1_contraction_mass: Option<f64>,
    pub c3: f64,
    pub sigma_n_sq: f64,
    pub beta1_hat: f64,
}

impl PosteriorSummary {
    pub fn nu_mean(&self) -> f64 {
        self.nu_n_draws.iter().sum::<f64>() / self.nu_n_draws.len() as f64
    }

    pub fn nu_max_abs(&self) -> f64 {
        self.nu_n_draws.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `mean(|nu_n| ∧ 2)` and `|tau_n - 1| ∧ 2`, the two pieces bounding the
    /// bounded-Lipschitz distance of the mixture.
    pub fn reduction_terms(&self) -> (f64, f64) {
        let m = self.nu_n_draws.iter().map(|v| v.abs().min(2.0)).sum::<f64>() / self.nu_n_draws.len() as f64;
        (m, (self.tau_n - 1.0).abs().min(2.0))
    }
}

pub fn summarize(
    samples: &[PosteriorSample],
    instance: &RegressionInstance,
    diagnostics: &DesignDiagnostics,
    estimate: &EstimateReport,
    config: &PosteriorConfig,
    c3: f64,
) -> Result<PosteriorSummary> {
    if samples.is_empty() {
        return Err(Error::SampleSize { needed: 1, got: 0 });
    }
    let (mean_star, _) = b1star_posterior(instance, config.sigma_n_sq)?;
    let x1_norm = diagnostics.x1_norm;
    let beta1_hat = estimate.beta1_hat;
    let nu_n_draws = samples
        .iter()
        .map(|s| x1_norm * (mean_star - s.shift(&diagnostics.gamma) - beta1_hat))
        .collect();
    let l1_contraction_mass = instance.beta_true.as_ref().map(|beta| {
        let radius = c3 * instance.s_star as f64 * diagnostics.lambda_n;
        let outside = samples
            .iter()
            .filter(|s| (s.dense(instance.p) - beta).iter().map(|v| v.abs()).sum::<f64>() > radius)
            .count();
        outside as f64 / samples.len() as f64
    });
    Ok(PosteriorSummary {
        nu_n_draws,
        tau_n: tau_n(x1_norm, config.sigma_n_sq),
        l1_contraction_mass,
        c3,
        sigma_n_sq: config.sigma_n_sq,
        beta1_hat,
    })
}

/// `|X_1| (b_1 - beta1_hat)` per draw.
pub fn standardized_draws(samples: &[PosteriorSample], x1_norm: f64, beta1_hat: f64) -> Vec<f64> {
    samples.iter().map(|s| x1_norm * (s.b1 - beta1_hat)).collect()
}
