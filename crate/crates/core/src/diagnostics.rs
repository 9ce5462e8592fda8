//! Design-matrix quantities: the correlations `gamma_i` of the nuisance
//! columns with `X_1`, the universal penalty scale `lambda_n`, the projected
//! nuisance design `W = (I - H) X_{-1}`, and the compatibility and
//! restricted-eigenvalue constants.
//!
//! The compatibility constant
//!
//! ```text
//! kappa0(k, M) = inf_{|b|_0 <= k} sqrt(s*) |M b| / (sqrt(n) |b|_1)
//! ```
//!
//! is computed exactly by support enumeration. For a fixed support `S` the
//! unit l1-sphere is the union of faces `{sigma^T u = 1, sigma_i u_i >= 0}`.
//! Dropping the orthant constraint only enlarges a face to its hyperplane,
//! and any hyperplane point `u` rescaled to `u / |u|_1` lands on the sphere
//! with a ratio no larger, so the infimum over the sphere equals
//! `min_sigma min_{sigma^T u = 1} |M_S u|`, i.e. `1 / sqrt(max_sigma
//! sigma^T G^{-1} sigma)` with `G = M_S^T M_S`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, binomial, select_columns, Combinations, RANK_RTOL};
use crate::model::RegressionInstance;
use crate::rng::derive_stream;

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 200_000;

#[derive(Debug, Clone)]
pub struct DesignDiagnostics {
    /// `gamma[i - 1] = X_1^T X_i / |X_1|^2` for `i >= 2` (0-based: columns 1..p).
    pub gamma: DVector<f64>,
    pub lambda_n: f64,
    pub x1_norm: f64,
    /// `(I - H) X_{-1}`, n x (p - 1).
    pub w: DMatrix<f64>,
    pub c1: f64,
    /// `max |gamma_i| - c1 * lambda_n`; nonpositive when the design
    /// condition on the nuisance correlations holds.
    pub assumption1_margin: f64,
    /// `s* log p / sqrt(n)`.
    pub dim_ratio: f64,
}

/// JSON-friendly view of [`DesignDiagnostics`] (drops `W`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub lambda_n: f64,
    pub x1_norm: f64,
    pub c1: f64,
    pub max_abs_gamma: f64,
    pub assumption1_margin: f64,
    pub dim_ratio: f64,
    pub w_orthogonality_residual: f64,
    pub gamma: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaReport>,
}

impl DesignDiagnostics {
    pub fn max_abs_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0_f64, |m, g| m.max(g.abs()))
    }

    /// `max_j |W_j^T X_1| / |X_1|`.
    pub fn orthogonality_residual(&self, instance: &RegressionInstance) -> f64 {
        let x1 = instance.column(0);
        (0..self.w.ncols())
            .map(|j| linalg::dot(linalg::column(&self.w, j), x1).abs() / self.x1_norm)
            .fold(0.0, f64::max)
    }

    pub fn report(&self, instance: &RegressionInstance, kappa: Option<KappaReport>) -> DiagnosticsReport {
        DiagnosticsReport {
            n: instance.n,
            p: instance.p,
            s_star: instance.s_star,
            lambda_n: self.lambda_n,
            x1_norm: self.x1_norm,
            c1: self.c1,
            max_abs_gamma: self.max_abs_gamma(),
            assumption1_margin: self.assumption1_margin,
            dim_ratio: self.dim_ratio,
            w_orthogonality_residual: self.orthogonality_residual(instance),
            gamma: self.gamma.iter().copied().collect(),
            kappa,
        }
    }
}

pub fn lambda_n(n: usize, p: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

pub fn diagnose(instance: &RegressionInstance, c1: f64) -> Result<DesignDiagnostics> {
    let (n, p) = (instance.n, instance.p);
    let x1 = instance.column(0);
    let x1_sq = linalg::norm_sq(x1);
    if !(x1_sq > 0.0) {
        return Err(Error::DegenerateDesign("|X_1| = 0".into()));
    }
    let gamma = DVector::from_fn(p - 1, |i, _| linalg::dot(x1, instance.column(i + 1)) / x1_sq);

    let mut w = DMatrix::zeros(n, p - 1);
    for j in 0..p - 1 {
        let g = gamma[j];
        let src = instance.column(j + 1);
        for (i, dst) in w.column_mut(j).iter_mut().enumerate() {
            *dst = src[i] - g * x1[i];
        }
    }

    let lambda = lambda_n(n, p);
    let max_gamma = gamma.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    Ok(DesignDiagnostics {
        gamma,
        lambda_n: lambda,
        x1_norm: x1_sq.sqrt(),
        w,
        c1,
        assumption1_margin: max_gamma - c1 * lambda,
        dim_ratio: instance.s_star as f64 * (p as f64).ln() / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    ExactEnumeration,
    /// Best value found by randomized search: an upper bound on the infimum.
    SearchLowerEstimate,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KappaValue {
    pub value: f64,
    pub certificate: Certificate,
    pub supports_evaluated: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompatibilityOptions {
    /// Enumerate exactly when `C(cols, k)` is at most this.
    pub budget: u64,
    /// Random restarts for the fallback search.
    pub search_iterations: usize,
    pub seed: u64,
}

impl Default for CompatibilityOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_ENUMERATION_BUDGET,
            search_iterations: 2_000,
            seed: 0,
        }
    }
}

/// `min_{u != 0, supp u = S} |M_S u| / |u|_1`; zero for rank-deficient `M_S`.
pub fn support_l1_ratio(m: &DMatrix<f64>, support: &[usize]) -> f64 {
    let ms = select_columns(m, support);
    let k = support.len();
    if k == 0 {
        return f64::INFINITY;
    }
    if !linalg::is_full_column_rank(&ms) {
        return 0.0;
    }
    let gram = ms.transpose() * &ms;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= RANK_RTOL * RANK_RTOL * lmax {
        return 0.0;
    }
    // G^{-1} = V diag(1/l) V^T
    let mut inv = DMatrix::zeros(k, k);
    for t in 0..k {
        let v = eig.eigenvectors.column(t);
        inv += (v * v.transpose()) / eig.eigenvalues[t];
    }
    // sigma and -sigma give the same quadratic form; fix sigma_0 = +1.
    let mut best = 0.0_f64;
    let mut sigma = vec![1.0; k];
    for mask in 0..(1u64 << (k - 1)) {
        for (t, s) in sigma.iter_mut().enumerate().skip(1) {
            *s = if mask >> (t - 1) & 1 == 1 { -1.0 } else { 1.0 };
        }
        let mut q = 0.0;
        for a in 0..k {
            let mut row = 0.0;
            for b in 0..k {
                row += inv[(a, b)] * sigma[b];
            }
            q += sigma[a] * row;
        }
        best = best.max(q);
    }
    1.0 / best.sqrt()
}

/// Compatibility constant `kappa0(k, M)` with normalization `sqrt(s*) / sqrt(n)`.
pub fn compatibility_constant(
    m: &DMatrix<f64>,
    k: usize,
    s_star: usize,
    opts: &CompatibilityOptions,
) -> Result<KappaValue> {
    let (n, cols) = m.shape();
    if k == 0 || k > cols {
        return Err(Error::Config(format!(
            "sparsity level k = {k} must be in 1..={cols}"
        )));
    }
    let scale = (s_star as f64).sqrt() / (n as f64).sqrt();
    let n_supports = binomial(cols, k);

    if n_supports <= opts.budget as f64 {
        let supports: Vec<Vec<usize>> = Combinations::new(cols, k).collect();
        let min = supports
            .par_iter()
            .map(|s| support_l1_ratio(m, s))
            .reduce(|| f64::INFINITY, f64::min);
        return Ok(KappaValue {
            value: scale * min,
            certificate: Certificate::ExactEnumeration,
            supports_evaluated: supports.len() as u64,
        });
    }

    let local_steps = 4 * k;
    let results: Vec<(f64, u64)> = (0..opts.search_iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = derive_stream(opts.seed, "kappa0-search", it as u64);
            let mut support = index::sample(&mut rng, cols, k).into_vec();
            let mut best = support_l1_ratio(m, &support);
            let mut evaluated = 1;
            for _ in 0..local_steps {
                let out = rng.random_range(0..k);
                let candidate = rng.random_range(0..cols);
                if support.contains(&candidate) {
                    continue;
                }
                let mut trial = support.clone();
                trial[out] = candidate;
                let v = support_l1_ratio(m, &trial);
                evaluated += 1;
                if v < best {
                    best = v;
                    support = trial;
                }
            }
            (best, evaluated)
        })
        .collect();
    let min = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    Ok(KappaValue {
        value: scale * min,
        certificate: Certificate::SearchLowerEstimate,
        supports_evaluated: results.iter().map(|r| r.1).sum(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecEstimate {
    /// Smallest ratio seen; `+inf` when nothing was sampled.
    pub value: f64,
    pub samples: usize,
    pub no_samples: bool,
}

/// Euclidean projection of `v` onto `{|x|_1 <= radius}`.
fn project_l1_ball(v: &mut [f64], radius: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in mags.iter().enumerate() {
        cum += u;
        let t = (cum - radius) / (i as f64 + 1.0);
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Randomized estimate of the restricted-eigenvalue constant
///
/// ```text
/// kappa(s, c2) = min_{|J| <= s} inf_{b != 0, |b_{J^c}|_1 <= c2 |b_J|_1} |M b| / (sqrt(n) |b_J|)
/// ```
///
/// Each restart draws `J`, starts from the smallest right singular vector of
/// `M_J` (the exact `c2 = 0` optimum for that `J`) and runs projected
/// gradient steps inside the cone. Every evaluated point is feasible, so the
/// result is an upper bound on the true constant. Reporting only.
pub fn rec_constant_estimate(
    m: &DMatrix<f64>,
    s: usize,
    c2: f64,
    iterations: usize,
    seed: u64,
) -> RecEstimate {
    const GRADIENT_STEPS: usize = 50;
    let (n, cols) = m.shape();
    if iterations == 0 || s == 0 {
        return RecEstimate {
            value: f64::INFINITY,
            samples: 0,
            no_samples: true,
        };
    }
    let s = s.min(cols);
    let sqrt_n = (n as f64).sqrt();
    let gram_full = m.transpose() * m;
    let lmax = gram_full.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 0.5 / lmax;

    let values: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = derive_stream(seed, "rec-search", it as u64);
            let mut j_set = index::sample(&mut rng, cols, s).into_vec();
            j_set.sort_unstable();
            let mut in_j = vec![false; cols];
            j_set.iter().for_each(|&j| in_j[j] = true);

            let mj = select_columns(m, &j_set);
            let eig = (mj.transpose() * &mj).symmetric_eigen();
            let (imin, lmin) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
            let mut best = lmin.max(0.0).sqrt() / sqrt_n;
            if c2 <= 0.0 {
                return best;
            }

            let mut b = DVector::zeros(cols);
            for (t, &j) in j_set.iter().enumerate() {
                b[j] = eig.eigenvectors[(t, imin)];
            }
            // Seed the off-support part with a small random feasible direction.
            let l1_j: f64 = j_set.iter().map(|&j| b[j].abs()).sum();
            let mut off: Vec<f64> = (0..cols)
                .filter(|j| !in_j[*j])
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let frac: f64 = rng.random();
            let off_l1: f64 = off.iter().map(|x| x.abs()).sum();
            if off_l1 > 0.0 {
                off.iter_mut().for_each(|x| *x *= frac * 0.1 * c2 * l1_j / off_l1);
            }
            let mut k = 0;
            for j in 0..cols {
                if !in_j[j] {
                    b[j] = off[k];
                    k += 1;
                }
            }

            for _ in 0..GRADIENT_STEPS {
                let grad = &gram_full * &b;
                b -= grad * (2.0 * step);
                let nj: f64 = j_set.iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt();
                if !(nj > 0.0) {
                    break;
                }
                b /= nj;
                let radius = c2 * j_set.iter().map(|&j| b[j].abs()).sum::<f64>();
                let mut off: Vec<f64> = (0..cols).filter(|j| !in_j[*j]).map(|j| b[j]).collect();
                project_l1_ball(&mut off, radius);
                let mut k = 0;
                for j in 0..cols {
                    if !in_j[j] {
                        b[j] = off[k];
                        k += 1;
                    }
                }
                let v = (m * &b).norm() / sqrt_n;
                if v < best {
                    best = v;
                }
            }
            best
        })
        .collect();

    RecEstimate {
        value: values.iter().copied().fold(f64::INFINITY, f64::min),
        samples: iterations,
        no_samples: false,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KappaConfig {
    pub delta: f64,
    pub c2: f64,
    pub compat: CompatibilityOptions,
    pub rec_iterations: usize,
}

impl Default for KappaConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            c2: 3.0,
            compat: CompatibilityOptions::default(),
            rec_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa0_x: KappaValue,
    pub kappa0_w: KappaValue,
    pub rec_estimate: RecEstimate,
    /// The `(2 + delta) s*` sparsity level used for `W`; `X` is evaluated at one more.
    pub sparsity_level_k: usize,
    pub delta: f64,
    pub c2: f64,
    /// `kappa0_W - kappa0_X + sqrt(s* log p) / n`; nonnegative when the
    /// projection bound holds on this instance.
    pub lemma4_slack: f64,
}

pub fn verify_lemma4(
    instance: &RegressionInstance,
    diagnostics: &DesignDiagnostics,
    cfg: &KappaConfig,
) -> Result<KappaReport> {
    let (n, p, s) = (instance.n, instance.p, instance.s_star);
    if p < 2 {
        return Err(Error::Config("need p >= 2 for the projected design".into()));
    }
    let k = (((2.0 + cfg.delta) * s as f64).floor() as usize).clamp(1, p - 1);
    let kappa0_w = compatibility_constant(&diagnostics.w, k, s, &cfg.compat)?;
    let kappa0_x = compatibility_constant(&instance.x, k + 1, s, &cfg.compat)?;
    let rec = rec_constant_estimate(
        &instance.x,
        (3 * s).max(1),
        cfg.c2,
        cfg.rec_iterations,
        cfg.compat.seed,
    );
    let correction = (s as f64 * (p as f64).ln()).sqrt() / n as f64;
    Ok(KappaReport {
        kappa0_x,
        kappa0_w,
        rec_estimate: rec,
        sparsity_level_k: k,
        delta: cfg.delta,
        c2: cfg.c2,
        lemma4_slack: kappa0_w.value - kappa0_x.value + correction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate, BetaPattern, DesignKind, GeneratorSpec};

    fn scaled_identity(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * (n as f64).sqrt()
    }

    fn instance_from(x: DMatrix<f64>) -> RegressionInstance {
        let n = x.nrows();
        RegressionInstance::new(x, DVector::zeros(n), None, 1, 0).unwrap()
    }

    #[test]
    fn orthogonal_columns_have_zero_gamma() {
        let d = diagnose(&instance_from(scaled_identity(4)), 1.0).unwrap();
        assert!(d.gamma.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn hand_gamma() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let d = diagnose(&instance_from(x), 1.0).unwrap();
        assert!((d.gamma[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_n_value() {
        assert!((lambda_n(100, 100) - 0.214_597).abs() < 1e-5);
    }

    #[test]
    fn zero_first_column_is_degenerate() {
        let x = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            diagnose(&instance_from(x), 1.0),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn identity_compatibility_values() {
        let m = scaled_identity(6);
        let opts = CompatibilityOptions::default();
        let k3 = compatibility_constant(&m, 3, 1, &opts).unwrap();
        assert_eq!(k3.certificate, Certificate::ExactEnumeration);
        assert!((k3.value - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let k1 = compatibility_constant(&m, 1, 1, &opts).unwrap();
        assert!((k1.value - 1.0).abs() < 1e-12);
        assert!(compatibility_constant(&m, 7, 1, &opts).is_err());
    }

    #[test]
    fn search_matches_enumeration_when_exhaustive() {
        let inst = generate(&GeneratorSpec {
            n: 10,
            p: 15,
            s_star: 2,
            beta_pattern: BetaPattern::EqualMagnitude { level: 1.0 },
            design_kind: DesignKind::IidStandardNormal,
            seed: 21,
        })
        .unwrap();
        let exact = compatibility_constant(&inst.x, 3, 2, &CompatibilityOptions::default()).unwrap();
        let search = compatibility_constant(
            &inst.x,
            3,
            2,
            &CompatibilityOptions {
                budget: 0,
                search_iterations: 3_000,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(search.certificate, Certificate::SearchLowerEstimate);
        assert!(search.value >= exact.value - 1e-12);
        assert!((search.value - exact.value).abs() < 1e-6);
    }

    #[test]
    fn rec_identity_is_one_and_empty_search_flagged() {
        let m = scaled_identity(8);
        let est = rec_constant_estimate(&m, 2, 3.0, 50, 1);
        assert!((est.value - 1.0).abs() < 1e-9, "{}", est.value);
        let none = rec_constant_estimate(&m, 2, 3.0, 0, 1);
        assert!(none.no_samples && none.value.is_infinite());
    }

    #[test]
    fn l1_projection() {
        let mut v = vec![3.0, -1.0, 0.5];
        project_l1_ball(&mut v, 2.0);
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        assert!((l1 - 2.0).abs() < 1e-12);
        assert!((v[0] - 2.0).abs() < 1e-12 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn orthogonal_first_column_leaves_nuisance_untouched() {
        let mut x = DMatrix::zeros(4, 3);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 2.0;
        x[(2, 1)] = 1.0;
        x[(3, 2)] = 3.0;
        x[(2, 2)] = -1.0;
        let inst = instance_from(x.clone());
        let d = diagnose(&inst, 1.0).unwrap();
        assert_eq!(d.w, x.columns(1, 2).into_owned());
    }
}
