mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use shadowprice::dsl::parse_restriction;
use shadowprice::isp::compute_isp;
use shadowprice::kkt::{KktSolver, SolverOptions};
use shadowprice::model::{LeastSquares, LossScale};
use shadowprice::restriction::{RestrictionSystem, SigmaSpec};
use shadowprice::tolerance::{select_tolerance, GridSpec};

fn ridge_case(seed: u64, p: usize, n: usize) -> (shadowprice::model::Dataset, RestrictionSystem) {
    let mut r = rng(seed);
    let x = design(&mut r, n, p);
    let theta = DVector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
    (
        linear_data(&mut r, x, &theta, 1.0),
        identity_system(&zero_slopes(p), p),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_expressions_parse_back(seed in any::<u64>(), p in 1usize..5) {
        let mut r = rng(seed);
        let text = random_expr(&mut r, p, 3);
        let e = parse_restriction(&text, p).unwrap();
        let again = parse_restriction(&e.to_string(), p).unwrap();
        let theta: Vec<f64> = (0..p).map(|_| r.random_range(-2.0..2.0)).collect();
        let (a, b) = (e.eval(&theta), again.eval(&theta));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{text}: {a} vs {b}");
        let jet = e.expr.jet(&theta);
        prop_assert!((jet.value - a).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn solutions_satisfy_kkt_conditions(seed in any::<u64>(), p in 2usize..7, frac in 0.01f64..1.5) {
        let (data, system) = ridge_case(seed, p, 120);
        let loss = LeastSquares::new(LossScale::Half);
        let solver = KktSolver::new(&data, &loss, &system, SolverOptions::default()).unwrap();
        let c = frac * solver.h_tilde();
        for sol in [solver.solve(c, None).unwrap(), KktSolver::new(&data, &Opaque(loss), &system, SolverOptions::default()).unwrap().solve(c, None).unwrap()] {
            let gh = system.eval_h_grad(&sol.theta).unwrap().amax();
            prop_assert!(sol.check_invariants(gh).is_ok(), "{:?}", sol.check_invariants(gh));
            prop_assert!(sol.h_value <= c * (1.0 + 1e-9) + 1e-12);
            prop_assert_eq!(sol.active, frac < 1.0);
        }
    }

    #[test]
    fn path_is_monotone(seed in any::<u64>(), p in 2usize..6) {
        let (data, system) = ridge_case(seed, p, 150);
        let loss = LeastSquares::new(LossScale::Mean);
        let solver = KktSolver::new(&data, &loss, &system, SolverOptions::default()).unwrap();
        let grid: Vec<f64> = (1..=30).map(|k| solver.h_tilde() * k as f64 / 25.0).collect();
        let path = solver.solve_path(&grid).unwrap();
        for w in path.windows(2) {
            prop_assert!(w[1].lambda <= w[0].lambda * (1.0 + 1e-9));
            let (l0, l1) = (data.residuals(&w[0].theta).norm_squared(), data.residuals(&w[1].theta).norm_squared());
            prop_assert!(l1 <= l0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bias_proxy_falls_as_tolerance_grows(seed in any::<u64>(), p in 2usize..6) {
        let (data, system) = ridge_case(seed, p, 200);
        let loss = LeastSquares::new(LossScale::Half);
        let solver = KktSolver::new(&data, &loss, &system, SolverOptions::default()).unwrap();
        let spec = GridSpec { c0: 2.0 * solver.h_tilde(), size: 40, ..GridSpec::default() };
        let curve = select_tolerance(&solver, &spec).unwrap().curve;
        for k in 1..curve.grid.len() {
            if curve.active[k] {
                prop_assert!(curve.bias[k] <= curve.bias[k - 1] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn loss_scale_doubles_multiplier(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let (data, system) = ridge_case(seed, 4, 100);
        let half = LeastSquares::new(LossScale::Half);
        let mean = LeastSquares::new(LossScale::Mean);
        let a = KktSolver::new(&data, &half, &system, SolverOptions::default()).unwrap();
        let c = frac * a.h_tilde();
        let sa = a.solve(c, None).unwrap();
        let sb = KktSolver::new(&data, &mean, &system, SolverOptions::default()).unwrap().solve(c, None).unwrap();
        prop_assert!((&sa.theta - &sb.theta).amax() < 1e-10);
        prop_assert!((sb.lambda - 2.0 * sa.lambda).abs() <= 1e-9 * sb.lambda);
        let (ia, ib) = (compute_isp(&sa, &system).unwrap(), compute_isp(&sb, &system).unwrap());
        prop_assert!((&ib - &ia * 2.0).amax() <= 1e-9 * ib.amax().max(1e-12));
    }

    #[test]
    fn isp_identity_with_diagonal_sigma(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let mut r = rng(seed);
        let p = 4;
        let x = design(&mut r, 150, p);
        let theta = DVector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
        let data = linear_data(&mut r, x, &theta, 1.0);
        let weights: Vec<f64> = (0..3).map(|_| r.random_range(0.2..4.0)).collect();
        let texts = ["theta[1] - theta[2]^2", "theta[2] + theta[3]", "theta[3]^3 - 0.1"];
        let system = RestrictionSystem::parse(&texts, p, &SigmaSpec::Diagonal(weights)).unwrap();
        let loss = LeastSquares::new(LossScale::Half);
        let solver = KktSolver::new(&data, &loss, &system, SolverOptions::default()).unwrap();
        let sol = solver.solve(frac * solver.h_tilde(), None).unwrap();
        let isp = compute_isp(&sol, &system).unwrap();
        prop_assert!(isp.iter().all(|v| *v >= 0.0));
        let g = system.eval_g(&sol.theta).unwrap();
        let lhs = g.abs().dot(&isp);
        let rhs = 2.0 * sol.lambda * sol.c;
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0));
    }
}

#[test]
fn derivative_spot_checks() {
    let mut r = rng(5);
    for _ in 0..200 {
        let p = r.random_range(1..=4);
        let text = random_expr(&mut r, p, 3);
        let Ok(system) =
            RestrictionSystem::parse(std::slice::from_ref(&text), p, &SigmaSpec::Identity)
        else {
            continue;
        };
        let theta = DVector::from_fn(p, |_, _| r.random_range(-1.5..1.5));
        let g = |t: &DVector<f64>| system.eval_g(t).unwrap();
        let err = rel_err(
            &system.eval_jacobian(&theta).unwrap(),
            &fd_jacobian(&g, &theta),
        );
        assert!(err < 1e-6, "{text}: {err:e}");
    }
}
