//! Problem representation and synthetic data generation.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// One sparse linear regression problem `Y = X b + eps`, `eps ~ N(0, I_n)`.
///
/// Coordinate 0 of `X` is always the coordinate of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInstance {
    pub n: usize,
    pub p: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta_true: Option<DVector<f64>>,
    pub s_star: usize,
    pub seed: u64,
}

impl RegressionInstance {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        beta_true: Option<DVector<f64>>,
        s_star: usize,
        seed: u64,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("design is {n}x{p}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!(
                "response has length {}, design has {n} rows",
                y.len()
            )));
        }
        if s_star > p {
            return Err(Error::Config(format!("s_star = {s_star} exceeds p = {p}")));
        }
        if let Some(beta) = &beta_true {
            if beta.len() != p {
                return Err(Error::Dimension(format!(
                    "beta_true has length {}, expected {p}",
                    beta.len()
                )));
            }
            let nnz = beta.iter().filter(|v| **v != 0.0).count();
            if nnz != s_star {
                return Err(Error::Config(format!(
                    "beta_true has {nnz} nonzeros but s_star = {s_star}"
                )));
            }
        }
        Ok(Self {
            n,
            p,
            x,
            y,
            beta_true,
            s_star,
            seed,
        })
    }

    /// Column `j` as a contiguous slice (storage is column-major).
    pub fn column(&self, j: usize) -> &[f64] {
        &self.x.as_slice()[j * self.n..(j + 1) * self.n]
    }

    /// `Y - X beta_true`, the realized noise, when the truth is known.
    pub fn noise(&self) -> Option<DVector<f64>> {
        self.beta_true.as_ref().map(|b| &self.y - &self.x * b)
    }

    pub fn beta1_true(&self) -> Option<f64> {
        self.beta_true.as_ref().map(|b| b[0])
    }

    /// Indices of the nonzero entries of `beta_true`.
    pub fn true_support(&self) -> Option<Vec<usize>> {
        self.beta_true.as_ref().map(|b| {
            b.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BetaPattern {
    FixedValues { values: Vec<f64> },
    EqualMagnitude { level: f64 },
    /// The k-th support coordinate (in index order) gets `1 / (k + 1)`.
    Decaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignKind {
    IidStandardNormal,
    /// `sqrt(n) * [I_p; 0]`, requires `n >= p`.
    IdentityScaled,
    UserSupplied { matrix: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub beta_pattern: BetaPattern,
    pub design_kind: DesignKind,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 2 {
            return Err(Error::Dimension(format!(
                "need n >= 1 and p >= 2, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if self.s_star > self.p {
            return Err(Error::Config(format!(
                "s_star = {} exceeds p = {}",
                self.s_star, self.p
            )));
        }
        match &self.beta_pattern {
            BetaPattern::FixedValues { values } => {
                if values.len() != self.s_star {
                    return Err(Error::Config(format!(
                        "fixed_values has {} entries, s_star = {}",
                        values.len(),
                        self.s_star
                    )));
                }
                if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
                    return Err(Error::Config(
                        "fixed_values must be finite and nonzero".into(),
                    ));
                }
            }
            BetaPattern::EqualMagnitude { level } => {
                if self.s_star > 0 && (*level == 0.0 || !level.is_finite()) {
                    return Err(Error::Config("equal_magnitude level must be nonzero".into()));
                }
            }
            BetaPattern::Decaying => {}
        }
        match &self.design_kind {
            DesignKind::IdentityScaled if self.n < self.p => Err(Error::Dimension(format!(
                "identity_scaled design needs n >= p, got n = {}, p = {}",
                self.n, self.p
            ))),
            DesignKind::UserSupplied { matrix } if matrix.shape() != (self.n, self.p) => {
                Err(Error::Dimension(format!(
                    "user design is {}x{}, expected {}x{}",
                    matrix.nrows(),
                    matrix.ncols(),
                    self.n,
                    self.p
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Draws a synthetic instance. Identical specs give bit-identical output.
pub fn generate(spec: &GeneratorSpec) -> Result<RegressionInstance> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);

    let x = match &spec.design_kind {
        DesignKind::IidStandardNormal => {
            let mut rng = derive_stream(spec.seed, "design", 0);
            DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
        }
        DesignKind::IdentityScaled => {
            let scale = (n as f64).sqrt();
            DMatrix::from_fn(n, p, |i, j| if i == j { scale } else { 0.0 })
        }
        DesignKind::UserSupplied { matrix } => matrix.clone(),
    };

    let mut support_rng = derive_stream(spec.seed, "support", 0);
    let mut support = index::sample(&mut support_rng, p, spec.s_star).into_vec();
    support.sort_unstable();

    let mut beta = DVector::zeros(p);
    for (k, &j) in support.iter().enumerate() {
        beta[j] = match &spec.beta_pattern {
            BetaPattern::FixedValues { values } => values[k],
            BetaPattern::EqualMagnitude { level } => *level,
            BetaPattern::Decaying => 1.0 / (k as f64 + 1.0),
        };
    }

    let mut noise_rng = derive_stream(spec.seed, "noise", 0);
    let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut noise_rng));
    let y = &x * &beta + noise;

    RegressionInstance::new(x, y, Some(beta), spec.s_star, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: usize, s: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n,
            p,
            s_star: s,
            beta_pattern: BetaPattern::EqualMagnitude { level: 1.0 },
            design_kind: DesignKind::IidStandardNormal,
            seed,
        }
    }

    #[test]
    fn zero_signal_response_is_noise() {
        let inst = generate(&spec(20, 5, 0, 3)).unwrap();
        let beta = inst.beta_true.as_ref().unwrap();
        assert!(beta.iter().all(|v| *v == 0.0));
        let mut rng = derive_stream(3, "noise", 0);
        for i in 0..20 {
            let e: f64 = StandardNormal.sample(&mut rng);
            assert_eq!(inst.y[i], e);
        }
    }

    #[test]
    fn identity_design_is_exact() {
        let mut s = spec(4, 4, 1, 9);
        s.design_kind = DesignKind::IdentityScaled;
        let inst = generate(&s).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert_eq!(inst.x[(i, j)], expect);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate(&spec(30, 40, 3, 11)).unwrap();
        let b = generate(&spec(30, 40, 3, 11)).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec(30, 40, 3, 12)).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn equal_magnitude_values_exact() {
        let mut s = spec(10, 30, 5, 1);
        s.beta_pattern = BetaPattern::EqualMagnitude { level: 0.37 };
        let inst = generate(&s).unwrap();
        let beta = inst.beta_true.unwrap();
        let nz: Vec<f64> = beta.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nz, vec![0.37; 5]);
    }

    #[test]
    fn noise_is_recovered() {
        let inst = generate(&spec(25, 10, 4, 5)).unwrap();
        let eps = inst.noise().unwrap();
        let mut rng = derive_stream(5, "noise", 0);
        for i in 0..25 {
            let e: f64 = StandardNormal.sample(&mut rng);
            assert!((eps[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            generate(&spec(10, 5, 6, 0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            generate(&spec(0, 5, 1, 0)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            generate(&spec(10, 1, 1, 0)),
            Err(Error::Dimension(_))
        ));
        let mut s = spec(10, 5, 2, 0);
        s.beta_pattern = BetaPattern::FixedValues { values: vec![1.0] };
        assert!(matches!(generate(&s), Err(Error::Config(_))));
    }

    #[test]
    fn instance_rejects_mismatched_truth() {
        let x = DMatrix::from_element(3, 2, 1.0);
        let y = DVector::zeros(3);
        let beta = DVector::from_vec(vec![1.0, 0.0]);
        assert!(RegressionInstance::new(x.clone(), y.clone(), Some(beta.clone()), 2, 0).is_err());
        assert!(RegressionInstance::new(x, y, Some(beta), 1, 0).is_ok());
    }
}
