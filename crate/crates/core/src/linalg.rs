//! Dense helpers shared by the solver, diagnostics and sampler.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        out.column_mut(k).copy_from_slice(column(m, j));
    }
    out
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Full column rank with the relative cutoff `RANK_RTOL * sigma_max`.
pub fn is_full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.ncols() > m.nrows() {
        return false;
    }
    let sv = singular_values(m);
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > RANK_RTOL * max
}

/// `log det(M^T M)` if `M` has full column rank.
pub fn log_det_gram(m: &DMatrix<f64>) -> Option<f64> {
    if m.ncols() == 0 {
        return Some(0.0);
    }
    if m.ncols() > m.nrows() {
        return None;
    }
    let sv = singular_values(m);
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= RANK_RTOL * max {
        return None;
    }
    Some(sv.iter().map(|s| 2.0 * s.ln()).sum())
}

/// Lexicographic k-subsets of `0..p`.
pub struct Combinations {
    p: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            p,
            current: (0..k).collect(),
            done: k > p,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let k = self.current.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.p - k + i {
                self.current[i] += 1;
                for t in i + 1..k {
                    self.current[t] = self.current[t - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// `C(n, k)` as f64; exact for the sizes used here, `inf` on overflow.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count_and_order() {
        let all: Vec<_> = Combinations::new(5, 2).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[9], vec![3, 4]);
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(15, 3), 455.0);
        assert_eq!(binomial(12, 6), 924.0);
        assert!((ln_binomial(15, 3) - 455f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(!is_full_column_rank(&m));
        assert!(log_det_gram(&m).is_none());
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        assert!(is_full_column_rank(&m));
        assert!((log_det_gram(&m).unwrap() - 4f64.ln()).abs() < 1e-12);
    }
}
