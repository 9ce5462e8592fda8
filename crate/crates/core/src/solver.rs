//! Weighted-L1 penalized least squares
//!
//! ```text
//! min_b |Y - X b|^2 + eta * sum_i w_i |b_i|
//! ```
//!
//! by cyclic coordinate descent. All weights equal gives the lasso; a zero
//! weight on the first coordinate gives the one-step de-biasing estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, column, dot, norm_sq};
use crate::model::RegressionInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub eta: f64,
    pub weights: DVector<f64>,
}

impl PenaltySpec {
    pub fn lasso(p: usize, eta: f64) -> Self {
        Self {
            eta,
            weights: DVector::from_element(p, 1.0),
        }
    }

    /// Every coordinate penalized except the first.
    pub fn one_step(p: usize, eta: f64) -> Self {
        let mut weights = DVector::from_element(p, 1.0);
        weights[0] = 0.0;
        Self { eta, weights }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.weights.len() != p {
            return Err(Error::Dimension(format!(
                "{} penalty weights for {p} coordinates",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("penalty weights must be finite and >= 0".into()));
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Config("at least one penalty weight must be positive".into()));
        }
        Ok(())
    }
}

/// `A * n * lambda_n`, the default penalty level.
pub fn default_eta(n: usize, p: usize, multiple: f64) -> f64 {
    multiple * n as f64 * crate::diagnostics::lambda_n(n, p)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    /// KKT stationarity tolerance.
    pub tol: f64,
    /// Largest coordinate move in a full sweep that counts as settled.
    pub coord_tol: f64,
    /// Sweep cap (full and active-set sweeps both count).
    pub max_iter: usize,
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            coord_tol: 1e-10,
            max_iter: 50_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverResult {
    pub b_hat: DVector<f64>,
    pub objective: f64,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every sweep, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, penalty: &PenaltySpec, b: &DVector<f64>) -> f64 {
    let r = y - x * b;
    let pen: f64 = b.iter().zip(penalty.weights.iter()).map(|(bi, w)| w * bi.abs()).sum();
    r.norm_squared() + penalty.eta * pen
}

/// Largest stationarity residual, recomputed from a fresh residual.
///
/// Penalized coordinates use `|2 X_j^T r - w_j eta sign(b_j)|` when active and
/// `(|2 X_j^T r| - w_j eta)_+` at zero; unpenalized ones use `|X_j^T r| / |X_j|`.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, penalty: &PenaltySpec, b: &DVector<f64>) -> f64 {
    let r = y - x * b;
    let r = r.as_slice();
    (0..x.ncols())
        .map(|j| {
            let xj = column(x, j);
            let g = dot(xj, r);
            let w = penalty.weights[j];
            if w == 0.0 {
                let nrm = norm_sq(xj).sqrt();
                if nrm > 0.0 {
                    g.abs() / nrm
                } else {
                    0.0
                }
            } else if b[j] != 0.0 {
                (2.0 * g - w * penalty.eta * b[j].signum()).abs()
            } else {
                (2.0 * g.abs() - w * penalty.eta).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct State<'a> {
    x: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    thresholds: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

impl State<'_> {
    /// One cyclic pass; returns (max |db|, max |db| * |X_j|^2).
    fn sweep(&mut self, coords: &[usize]) -> (f64, f64) {
        let mut max_db = 0.0_f64;
        let mut max_dg = 0.0_f64;
        for &j in coords {
            let cs = self.col_sq[j];
            if cs == 0.0 {
                continue;
            }
            let xj = column(self.x, j);
            let old = self.b[j];
            let z = dot(xj, &self.r) + cs * old;
            let new = soft_threshold(z, self.thresholds[j]) / cs;
            if new != old {
                axpy(old - new, xj, &mut self.r);
                self.b[j] = new;
                let db = (new - old).abs();
                max_db = max_db.max(db);
                max_dg = max_dg.max(db * cs);
            }
        }
        (max_db, max_dg)
    }

    fn objective(&self, eta_w: &[f64]) -> f64 {
        norm_sq(&self.r)
            + self
                .b
                .iter()
                .zip(eta_w)
                .map(|(b, w)| w * b.abs())
                .sum::<f64>()
    }

    fn refresh_residual(&mut self, y: &DVector<f64>) {
        self.r.copy_from_slice(y.as_slice());
        for (j, &bj) in self.b.iter().enumerate() {
            if bj != 0.0 {
                axpy(-bj, column(self.x, j), &mut self.r);
            }
        }
    }
}

pub fn solve(instance: &RegressionInstance, penalty: &PenaltySpec, opts: &SolverOptions) -> Result<SolverResult> {
    solve_xy(&instance.x, &instance.y, penalty, opts)
}

/// Cyclic coordinate descent with active-set passes.
///
/// Converged means a full sweep moved no coordinate by more than
/// `coord_tol` and the recomputed KKT residual is within `tol`. Running out
/// of sweeps returns `converged = false` with the current iterate.
pub fn solve_xy(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &SolverOptions,
) -> Result<SolverResult> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("response length {} != {n}", y.len())));
    }
    penalty.validate(p)?;

    let col_sq: Vec<f64> = (0..p).map(|j| norm_sq(column(x, j))).collect();
    for (j, &sq) in col_sq.iter().enumerate() {
        if penalty.weights[j] == 0.0 && sq == 0.0 {
            return Err(Error::DegenerateDesign(format!(
                "column {j} is zero but unpenalized"
            )));
        }
    }
    let eta_w: Vec<f64> = penalty.weights.iter().map(|w| w * penalty.eta).collect();
    let mut st = State {
        x,
        thresholds: eta_w.iter().map(|t| t / 2.0).collect(),
        col_sq,
        b: vec![0.0; p],
        r: y.as_slice().to_vec(),
    };
    let all: Vec<usize> = (0..p).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut last_obj = st.objective(&eta_w);

    let record = |st: &State, trace: &mut Vec<f64>, last: &mut f64| {
        let obj = st.objective(&eta_w);
        debug_assert!(
            obj <= *last + 1e-9 * last.abs().max(1.0),
            "objective increased: {last} -> {obj}"
        );
        *last = obj;
        if opts.record_trace {
            trace.push(obj);
        }
    };

    while iterations < opts.max_iter {
        let (full_db, _) = st.sweep(&all);
        iterations += 1;
        st.refresh_residual(y);
        record(&st, &mut trace, &mut last_obj);

        if full_db <= opts.coord_tol {
            let b = DVector::from_column_slice(&st.b);
            kkt = kkt_violation(x, y, penalty, &b);
            if kkt <= opts.tol {
                converged = true;
                break;
            }
        }

        let active: Vec<usize> = (0..p)
            .filter(|&j| st.b[j] != 0.0 || penalty.weights[j] == 0.0)
            .collect();
        while iterations < opts.max_iter && !active.is_empty() {
            let (db, dg) = st.sweep(&active);
            iterations += 1;
            record(&st, &mut trace, &mut last_obj);
            if db <= opts.coord_tol || dg <= 0.25 * opts.tol {
                break;
            }
        }
    }

    let b_hat = DVector::from_vec(st.b);
    if !converged {
        kkt = kkt_violation(x, y, penalty, &b_hat);
    }
    Ok(SolverResult {
        objective: objective(x, y, penalty, &b_hat),
        b_hat,
        kkt_violation: kkt,
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct L1Control {
    pub holds: bool,
    pub l1_error: f64,
    pub threshold: f64,
}

/// `|b_hat - beta|_1 <= C s* lambda_n`.
pub fn check_l1_control(b_hat: &DVector<f64>, instance: &RegressionInstance, c: f64) -> Result<L1Control> {
    let beta = instance
        .beta_true
        .as_ref()
        .ok_or_else(|| Error::Precondition("l1 control needs beta_true".into()))?;
    let l1_error = (b_hat - beta).iter().map(|v| v.abs()).sum::<f64>();
    let threshold = c * instance.s_star as f64 * crate::diagnostics::lambda_n(instance.n, instance.p);
    Ok(L1Control {
        holds: l1_error <= threshold,
        l1_error,
        threshold,
    })
}

/// Whether `|e_{S^c}|_1 <= c_ratio |e_S|_1`. With `include_first`, coordinate
/// 0 is moved from the complement into `S`.
pub fn cone_condition(error: &[f64], support: &[usize], c_ratio: f64, include_first: bool) -> bool {
    let mut in_s = vec![false; error.len()];
    support.iter().for_each(|&j| in_s[j] = true);
    if include_first && !error.is_empty() {
        in_s[0] = true;
    }
    let (mut on, mut off) = (0.0, 0.0);
    for (j, e) in error.iter().enumerate() {
        if in_s[j] {
            on += e.abs();
        } else {
            off += e.abs();
        }
    }
    off <= c_ratio * on
}

pub fn check_cone_condition(
    b_hat: &DVector<f64>,
    instance: &RegressionInstance,
    c_ratio: f64,
    include_first: bool,
) -> Result<bool> {
    let beta = instance
        .beta_true
        .as_ref()
        .ok_or_else(|| Error::Precondition("cone condition needs beta_true".into()))?;
    let err: Vec<f64> = (b_hat - beta).iter().copied().collect();
    let support = instance.true_support().unwrap_or_default();
    Ok(cone_condition(&err, &support, c_ratio, include_first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_soft_threshold() {
        // unit column, X^T Y = 3, eta = 2 -> b = 3 - 1
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = DVector::from_vec(vec![3.0, 5.0]);
        let res = solve_xy(&x, &y, &PenaltySpec::lasso(1, 2.0), &SolverOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.b_hat[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kink_tie_goes_to_zero() {
        // |X^T Y| equals eta/2 exactly.
        let x = DMatrix::from_column_slice(1, 1, &[1.0]);
        let y = DVector::from_vec(vec![1.0]);
        let res = solve_xy(&x, &y, &PenaltySpec::lasso(1, 2.0), &SolverOptions::default()).unwrap();
        assert_eq!(res.b_hat[0], 0.0);
    }

    #[test]
    fn penalty_validation() {
        assert!(PenaltySpec::lasso(3, 0.0).validate(3).is_err());
        assert!(PenaltySpec::lasso(3, 1.0).validate(2).is_err());
        let zero = PenaltySpec {
            eta: 1.0,
            weights: DVector::zeros(2),
        };
        assert!(zero.validate(2).is_err());
        let neg = PenaltySpec {
            eta: 1.0,
            weights: DVector::from_vec(vec![1.0, -1.0]),
        };
        assert!(neg.validate(2).is_err());
    }

    #[test]
    fn zero_unpenalized_column_is_degenerate() {
        let x = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let err = solve_xy(&x, &y, &PenaltySpec::one_step(2, 1.0), &SolverOptions::default());
        assert!(matches!(err, Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn zero_penalized_column_stays_zero() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let res = solve_xy(&x, &y, &PenaltySpec::one_step(2, 1.0), &SolverOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.b_hat[1], 0.0);
        assert!((res.b_hat[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 1.1, 2.0, 2.9]);
        let y = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let opts = SolverOptions {
            max_iter: 1,
            ..SolverOptions::default()
        };
        let res = solve_xy(&x, &y, &PenaltySpec::lasso(2, 0.01), &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.kkt_violation > opts.tol);
    }

    #[test]
    fn cone_arithmetic() {
        let ones = vec![1.0; 6];
        assert!(cone_condition(&ones, &[0, 1, 2], 1.0, false));
        assert!(!cone_condition(&ones, &[0, 1], 1.0, false));
        assert!(cone_condition(&[0.0; 4], &[1], 0.0, false));
        assert!(cone_condition(&[0.0, 2.0, 0.0], &[1], 0.0, false));
        // include_first moves coordinate 0 into S.
        assert!(cone_condition(&ones[..4], &[1], 1.0, true));
        assert!(!cone_condition(&ones[..4], &[1], 1.0, false));
    }
}
