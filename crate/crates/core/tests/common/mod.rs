//! Test oracles shared by the integration suites. Each is a deliberately
//! simple, independent implementation of something the library computes.

#![allow(dead_code)]

use debias_core::model::{generate, BetaPattern, DesignKind, GeneratorSpec, RegressionInstance};
use debias_core::rng::derive_stream;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = derive_stream(seed, "test-matrix", 0);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn gaussian_vector(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = derive_stream(seed, "test-vector", 0);
    DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng))
}

pub fn equal_signal(n: usize, p: usize, s_star: usize, level: f64, seed: u64) -> RegressionInstance {
    generate(&GeneratorSpec {
        n,
        p,
        s_star,
        beta_pattern: BetaPattern::EqualMagnitude { level },
        design_kind: DesignKind::IidStandardNormal,
        seed,
    })
    .unwrap()
}

/// `|y - X b|^2 + eta * sum w_i |b_i|`.
pub fn penalized_objective(x: &DMatrix<f64>, y: &DVector<f64>, eta: f64, w: &[f64], b: &DVector<f64>) -> f64 {
    (y - x * b).norm_squared() + eta * b.iter().zip(w).map(|(v, wi)| wi * v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient (FISTA with adaptive restart) on the same
/// objective as the coordinate-descent solver.
pub fn fista(x: &DMatrix<f64>, y: &DVector<f64>, eta: f64, w: &[f64], iters: usize) -> DVector<f64> {
    let p = x.ncols();
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    let lip = 2.0 * gram.symmetric_eigenvalues().max();
    let prox = |v: &DVector<f64>| {
        DVector::from_fn(p, |i, _| {
            let t = eta * w[i] / lip;
            v[i].signum() * (v[i].abs() - t).max(0.0)
        })
    };
    let mut b = DVector::zeros(p);
    let mut z = b.clone();
    let mut t = 1.0_f64;
    let mut f_prev = f64::INFINITY;
    for _ in 0..iters {
        let grad = 2.0 * (&gram * &z - &xty);
        let b_next = prox(&(&z - grad / lip));
        let f = penalized_objective(x, y, eta, w, &b_next);
        if f > f_prev {
            // restart momentum
            t = 1.0;
            z = b.clone();
            continue;
        }
        f_prev = f;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &b_next + (&b_next - &b) * ((t - 1.0) / t_next);
        b = b_next;
        t = t_next;
    }
    b
}

/// Minimum-cost perfect assignment (Hungarian algorithm, O(n^3)).
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut p = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// Brute-force compatibility constant: every support of size `k`, every
/// sign pattern, and on each face of the l1 sphere a barycentric grid
/// followed by a few rounds of finer grids around the best points.
pub fn kappa_direction_grid(m: &DMatrix<f64>, k: usize, s_star: usize) -> f64 {
    let (n, cols) = m.shape();
    let scale = (s_star as f64).sqrt() / (n as f64).sqrt();
    let coarse = simplex_grid(k, 40);
    let mut best = f64::INFINITY;
    for support in combinations(cols, k) {
        for signs in 0..(1u32 << k) {
            let signed = DMatrix::from_fn(n, k, |i, j| {
                let v = m[(i, support[j])];
                if signs >> j & 1 == 1 {
                    -v
                } else {
                    v
                }
            });
            let eval = |w: &[f64]| (&signed * DVector::from_column_slice(w)).norm();
            let mut scored: Vec<(f64, Vec<f64>)> = coarse.iter().map(|w| (eval(w), w.clone())).collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (mut val, mut centre) in scored.into_iter().take(3) {
                let mut radius = 2.0 / 40.0;
                for _ in 0..8 {
                    for cand in local_grid(&centre, radius, 10) {
                        let v = eval(&cand);
                        if v < val {
                            val = v;
                            centre = cand;
                        }
                    }
                    radius /= 5.0;
                }
                best = best.min(val);
            }
        }
    }
    best * scale
}

fn combinations(cols: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, cols: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..cols {
            cur.push(j);
            rec(j + 1, cols, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, cols, k, &mut Vec::new(), &mut out);
    out
}

/// Points of the probability simplex in `dim` coordinates with denominators `steps`.
fn simplex_grid(dim: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(dim: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if dim == 1 {
            cur.push(left as f64 / steps as f64);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in 0..=left {
            cur.push(a as f64 / steps as f64);
            rec(dim - 1, left - a, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Simplex points whose first `dim - 1` coordinates lie on a grid of
/// half-width `radius` around `centre`.
fn local_grid(centre: &[f64], radius: f64, half: i32) -> Vec<Vec<f64>> {
    let free = centre.len() - 1;
    let h = radius / half as f64;
    let mut out = Vec::new();
    let mut idx = vec![-half; free];
    loop {
        let mut w: Vec<f64> = (0..free).map(|i| centre[i] + idx[i] as f64 * h).collect();
        let rest = 1.0 - w.iter().sum::<f64>();
        if w.iter().all(|v| *v >= 0.0) && rest >= 0.0 {
            w.push(rest);
            out.push(w);
        }
        let mut i = 0;
        loop {
            if i == free {
                return out;
            }
            idx[i] += 1;
            if idx[i] <= half {
                break;
            }
            idx[i] = -half;
            i += 1;
        }
    }
}
