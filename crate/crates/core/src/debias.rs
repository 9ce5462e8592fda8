//! De-biased estimators of the first coordinate.
//!
//! Both estimators end in the same profile least-squares step
//! `beta1_hat = X_1^T (Y - X_{-1} b_{-1}) / |X_1|^2`, which yields the exact
//! error decomposition
//!
//! ```text
//! beta1_hat - beta_1 = X_1^T eps / |X_1|^2 + sum_{i>=2} gamma_i (beta_i - b_i)
//! ```
//!
//! They differ only in where `b_{-1}` comes from: a separate lasso fit
//! (two-step) or the same fit with coordinate 1 left unpenalized (one-step).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::model::RegressionInstance;
use crate::solver::{
    check_cone_condition, check_l1_control, solve, L1Control, PenaltySpec, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoStepZz,
    OneStep,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TwoStepZz => "zz",
            Method::OneStep => "one_step",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DebiasOptions {
    pub solver: SolverOptions,
    /// Normal quantile for the interval; 1.96 gives 95%.
    pub z_quantile: f64,
    /// Constant `C` in `|b - beta|_1 <= C s* lambda_n`.
    pub l1_constant: f64,
    /// Cone ratio for the error-cone check.
    pub cone_ratio: f64,
}

impl Default for DebiasOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            z_quantile: 1.96,
            l1_constant: 8.0,
            cone_ratio: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub beta1_hat: f64,
    /// Lasso fit used by the two-step estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<Vec<f64>>,
    /// Full one-step solution, with coordinate 1 at its profile value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<Vec<f64>>,
    pub oracle_term: Option<f64>,
    pub bias_term: Option<f64>,
    pub remainder_scaled: Option<f64>,
    pub interval_95: (f64, f64),
    pub z_quantile: f64,
    pub x1_norm: f64,
    pub eta: Option<f64>,
    pub solver_iterations: usize,
    pub solver_kkt: f64,
    pub l1_control: Option<L1Control>,
    pub cone_condition: Option<bool>,
}

impl EstimateReport {
    /// The penalized vector the estimate was built from.
    pub fn coefficients(&self) -> Option<&[f64]> {
        self.solution.as_deref().or(self.first_stage.as_deref())
    }
}

fn x1_norm_sq(instance: &RegressionInstance) -> Result<f64> {
    let s = norm_sq(instance.column(0));
    if !(s > 0.0) {
        return Err(Error::DegenerateDesign("|X_1| = 0".into()));
    }
    Ok(s)
}

/// `argmin_{b1} |Y - X_{-1} rest - b1 X_1|^2`, where `coefs[0]` is ignored.
pub fn profile_first_coordinate(instance: &RegressionInstance, coefs: &[f64]) -> Result<f64> {
    let x1_sq = x1_norm_sq(instance)?;
    let mut resid = instance.y.as_slice().to_vec();
    for (j, &b) in coefs.iter().enumerate().skip(1) {
        if b != 0.0 {
            crate::linalg::axpy(-b, instance.column(j), &mut resid);
        }
    }
    Ok(dot(instance.column(0), &resid) / x1_sq)
}

struct Decomposition {
    oracle: f64,
    bias: f64,
    remainder_scaled: f64,
}

fn decompose(instance: &RegressionInstance, beta1_hat: f64, coefs: &[f64]) -> Result<Option<Decomposition>> {
    let Some(beta) = instance.beta_true.as_ref() else {
        return Ok(None);
    };
    let x1_sq = x1_norm_sq(instance)?;
    let x1 = instance.column(0);
    let eps = instance.noise().expect("truth present");
    let oracle = dot(x1, eps.as_slice()) / x1_sq;
    let bias: f64 = (1..instance.p)
        .map(|i| dot(x1, instance.column(i)) / x1_sq * (beta[i] - coefs[i]))
        .sum();
    let remainder_scaled = (instance.n as f64).sqrt() * (beta1_hat - beta[0] - oracle);
    Ok(Some(Decomposition {
        oracle,
        bias,
        remainder_scaled,
    }))
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    instance: &RegressionInstance,
    method: Method,
    beta1_hat: f64,
    coefs: Vec<f64>,
    eta: Option<f64>,
    solver_iterations: usize,
    solver_kkt: f64,
    opts: &DebiasOptions,
) -> Result<EstimateReport> {
    let x1_norm = x1_norm_sq(instance)?.sqrt();
    let dec = decompose(instance, beta1_hat, &coefs)?;
    let half = opts.z_quantile / x1_norm;
    let (l1_control, cone) = if instance.beta_true.is_some() {
        let v = DVector::from_column_slice(&coefs);
        let support = instance.true_support().unwrap_or_default();
        let first_outside = !support.contains(&0);
        (
            Some(check_l1_control(&v, instance, opts.l1_constant)?),
            Some(check_cone_condition(&v, instance, opts.cone_ratio, first_outside)?),
        )
    } else {
        (None, None)
    };
    let (first_stage, solution) = match method {
        Method::TwoStepZz => (Some(coefs), None),
        Method::OneStep => (None, Some(coefs)),
    };
    Ok(EstimateReport {
        method,
        beta1_hat,
        first_stage,
        solution,
        oracle_term: dec.as_ref().map(|d| d.oracle),
        bias_term: dec.as_ref().map(|d| d.bias),
        remainder_scaled: dec.as_ref().map(|d| d.remainder_scaled),
        interval_95: (beta1_hat - half, beta1_hat + half),
        z_quantile: opts.z_quantile,
        x1_norm,
        eta,
        solver_iterations,
        solver_kkt,
        l1_control,
        cone_condition: cone,
    })
}

/// Two-step estimate from a given first-stage vector.
pub fn two_step_from_first_stage(
    instance: &RegressionInstance,
    first_stage: &[f64],
    opts: &DebiasOptions,
) -> Result<EstimateReport> {
    if first_stage.len() != instance.p {
        return Err(Error::Dimension(format!(
            "first stage has {} entries, p = {}",
            first_stage.len(),
            instance.p
        )));
    }
    let beta1_hat = profile_first_coordinate(instance, first_stage)?;
    build_report(
        instance,
        Method::TwoStepZz,
        beta1_hat,
        first_stage.to_vec(),
        None,
        0,
        0.0,
        opts,
    )
}

/// Lasso first stage, then least squares on `X_1` with the rest held fixed.
pub fn two_step_zz(
    instance: &RegressionInstance,
    first_stage_penalty: &PenaltySpec,
    opts: &DebiasOptions,
) -> Result<EstimateReport> {
    x1_norm_sq(instance)?;
    let fit = solve(instance, first_stage_penalty, &opts.solver)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            partial: Box::new(fit),
        });
    }
    let coefs: Vec<f64> = fit.b_hat.iter().copied().collect();
    let beta1_hat = profile_first_coordinate(instance, &coefs)?;
    build_report(
        instance,
        Method::TwoStepZz,
        beta1_hat,
        coefs,
        Some(first_stage_penalty.eta),
        fit.iterations,
        fit.kkt_violation,
        opts,
    )
}

/// Penalize every coordinate except the first, in a single fit.
///
/// The reported first coordinate is the exact profile minimizer given the
/// fitted nuisance coordinates; it differs from the raw solver iterate by at
/// most the KKT tolerance over `|X_1|`.
pub fn one_step(instance: &RegressionInstance, eta: f64, opts: &DebiasOptions) -> Result<EstimateReport> {
    x1_norm_sq(instance)?;
    if !(eta > 0.0) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let (mut coefs, iterations, kkt) = if instance.p == 1 {
        (vec![0.0], 0, 0.0)
    } else {
        let fit = solve(instance, &PenaltySpec::one_step(instance.p, eta), &opts.solver)?;
        if !fit.converged {
            return Err(Error::NotConverged {
                partial: Box::new(fit),
            });
        }
        (fit.b_hat.iter().copied().collect(), fit.iterations, fit.kkt_violation)
    };
    let beta1_hat = profile_first_coordinate(instance, &coefs)?;
    coefs[0] = beta1_hat;
    build_report(
        instance,
        Method::OneStep,
        beta1_hat,
        coefs,
        Some(eta),
        iterations,
        kkt,
        opts,
    )
}

/// `|X_1^T (Y - X b)| / |X_1|` for the one-step solution.
pub fn kkt_identity_check(report: &EstimateReport, instance: &RegressionInstance) -> Result<f64> {
    if report.method != Method::OneStep {
        return Err(Error::Precondition("kkt identity applies to one-step reports".into()));
    }
    let b = report
        .solution
        .as_ref()
        .ok_or_else(|| Error::Precondition("report carries no solution".into()))?;
    let mut resid = instance.y.as_slice().to_vec();
    for (j, &bj) in b.iter().enumerate() {
        if bj != 0.0 {
            crate::linalg::axpy(-bj, instance.column(j), &mut resid);
        }
    }
    let x1 = instance.column(0);
    Ok(dot(x1, &resid).abs() / norm_sq(x1).sqrt())
}
