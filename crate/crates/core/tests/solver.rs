mod common;

use common::{equal_signal, fista, gaussian_matrix, gaussian_vector, penalized_objective};
use debias_core::diagnostics::lambda_n;
use debias_core::model::RegressionInstance;
use debias_core::solver::{
    check_cone_condition, check_l1_control, cone_condition, default_eta, kkt_violation, solve, solve_xy, PenaltySpec,
    SolverOptions,
};
use debias_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn matches_proximal_gradient_oracle() {
    for seed in 0..10u64 {
        let x = gaussian_matrix(20, 30, seed);
        let y = gaussian_vector(20, 1000 + seed);
        let eta = 2.0 * 20.0 * lambda_n(20, 30);
        let pen = PenaltySpec::lasso(30, eta);
        let cd = solve_xy(&x, &y, &pen, &SolverOptions::default()).unwrap();
        assert!(cd.converged && cd.kkt_violation <= 1e-8);
        let w = vec![1.0; 30];
        let oracle = fista(&x, &y, eta, &w, 20_000);
        let f_oracle = penalized_objective(&x, &y, eta, &w, &oracle);
        assert!(
            (cd.objective - f_oracle).abs() <= 1e-6 * f_oracle.max(1.0),
            "seed {seed}: {} vs {f_oracle}",
            cd.objective
        );
    }
}

#[test]
fn huge_penalty_gives_zero() {
    let x = gaussian_matrix(15, 10, 3);
    let y = gaussian_vector(15, 4);
    let max = (x.transpose() * &y).amax();
    let res = solve_xy(&x, &y, &PenaltySpec::lasso(10, 2.0 * max), &SolverOptions::default()).unwrap();
    assert!(res.b_hat.iter().all(|v| *v == 0.0));
}

#[test]
fn huge_nuisance_penalty_gives_simple_regression() {
    let x = gaussian_matrix(15, 10, 5);
    let y = gaussian_vector(15, 6);
    let mut pen = PenaltySpec::one_step(10, 1.0);
    for j in 1..10 {
        pen.weights[j] = 1e9;
    }
    let res = solve_xy(&x, &y, &pen, &SolverOptions::default()).unwrap();
    let x1 = x.column(0);
    assert!(res.b_hat.rows(1, 9).iter().all(|v| *v == 0.0));
    assert!((res.b_hat[0] - x1.dot(&y) / x1.norm_squared()).abs() < 1e-12);
}

#[test]
fn objective_never_increases_across_sweeps() {
    let x = gaussian_matrix(30, 50, 8);
    let y = gaussian_vector(30, 9);
    let opts = SolverOptions {
        record_trace: true,
        ..SolverOptions::default()
    };
    let res = solve_xy(&x, &y, &PenaltySpec::lasso(50, 5.0), &opts).unwrap();
    assert!(res.objective_trace.len() > 1);
    for w in res.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
    }
}

#[test]
fn converged_results_pass_independent_kkt_check() {
    for seed in 0..5u64 {
        let inst = equal_signal(40, 80, 3, 1.0, seed);
        let pen = PenaltySpec::one_step(80, default_eta(40, 80, 2.0));
        let res = solve(&inst, &pen, &SolverOptions::default()).unwrap();
        assert!(res.converged);
        assert!(kkt_violation(&inst.x, &inst.y, &pen, &res.b_hat) <= 1e-8);
    }
}

#[test]
fn l1_control_and_cone_examples() {
    let inst = equal_signal(50, 60, 3, 1.0, 2);
    let beta = inst.beta_true.clone().unwrap();
    let c = check_l1_control(&beta, &inst, 8.0).unwrap();
    assert!(c.holds && c.l1_error == 0.0);
    assert!(check_cone_condition(&beta, &inst, 3.0, false).unwrap());
    let support = inst.true_support().unwrap();
    let mut on_support = beta.clone();
    on_support[support[0]] += 0.7;
    assert!(check_cone_condition(&on_support, &inst, 0.0, false).unwrap());
    let ones = vec![1.0; 10];
    assert!(cone_condition(&ones, &[0, 1, 2, 3, 4], 1.0, false));
    assert!(!cone_condition(&ones[..9], &[0, 1, 2, 3], 1.0, false));

    let no_truth = RegressionInstance::new(inst.x.clone(), inst.y.clone(), None, 0, 0).unwrap();
    assert!(matches!(check_l1_control(&beta, &no_truth, 8.0), Err(Error::Precondition(_))));
}

#[test]
fn l1_control_rate_small_design() {
    // n = 100, p = 200, s* = 3, all weights 1, eta = 2 n lambda_n, C = 8
    let mut holds = 0;
    for seed in 0..200u64 {
        let inst = equal_signal(100, 200, 3, 1.0, 50_000 + seed);
        let res = solve(&inst, &PenaltySpec::lasso(200, default_eta(100, 200, 2.0)), &SolverOptions::default()).unwrap();
        if check_l1_control(&res.b_hat, &inst, 8.0).unwrap().holds {
            holds += 1;
        }
    }
    eprintln!("l1 control held in {holds}/200 replications");
    assert!(holds >= 190, "{holds}");
}

fn small_problem() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, f64)> {
    (4usize..12, 2usize..10, any::<u64>(), 0.5f64..20.0).prop_map(|(n, p, seed, eta)| {
        (gaussian_matrix(n, p, seed), gaussian_vector(n, seed ^ 0x5555), eta)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_columns_permutes_solution((x, y, eta) in small_problem(), rot in 1usize..9) {
        let p = x.ncols();
        let perm: Vec<usize> = (0..p).map(|j| (j + rot) % p).collect();
        let mut w = DVector::from_fn(p, |j, _| 0.5 + j as f64 / p as f64);
        w[0] = 1.0;
        let pen = PenaltySpec { eta, weights: w.clone() };
        let xp = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, perm[j])]);
        let pen_p = PenaltySpec { eta, weights: DVector::from_fn(p, |j, _| w[perm[j]]) };
        let a = solve_xy(&x, &y, &pen, &SolverOptions::default()).unwrap();
        let b = solve_xy(&xp, &y, &pen_p, &SolverOptions::default()).unwrap();
        prop_assert!(a.converged && b.converged);
        prop_assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.max(1.0));
        // with p > n the minimizer can be non-unique; compare fits then
        if x.nrows() >= p {
            for (j, &src) in perm.iter().enumerate() {
                prop_assert!((b.b_hat[j] - a.b_hat[src]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn scaling_response_and_penalty_scales_solution((x, y, eta) in small_problem(), c in 0.1f64..10.0) {
        let pen = PenaltySpec::lasso(x.ncols(), eta);
        let pen_c = PenaltySpec::lasso(x.ncols(), c * eta);
        let a = solve_xy(&x, &y, &pen, &SolverOptions::default()).unwrap();
        let b = solve_xy(&x, &(&y * c), &pen_c, &SolverOptions::default()).unwrap();
        prop_assert!(a.converged && b.converged);
        let fa = &x * &a.b_hat * c;
        let fb = &x * &b.b_hat;
        prop_assert!((fa - fb).amax() <= 1e-8 * c.max(1.0) * y.amax().max(1.0));
        if x.nrows() >= x.ncols() {
            prop_assert!((&a.b_hat * c - &b.b_hat).amax() <= 1e-8 * c.max(1.0));
        }
    }
}
