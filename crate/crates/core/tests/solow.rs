use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use shadowprice::kkt::{KktSolver, SolverOptions};
use shadowprice::model::{fit_unconstrained, LeastSquares, LossScale};
use shadowprice::restriction::{RestrictionSystem, SigmaSpec};
use shadowprice::solow::{
    restricted_ols, run_solow_on, solow_dataset, synthetic_rows, SolowConfig,
};

const BETA: f64 = 1.3791;

fn sample(seed: u64) -> shadowprice::model::Dataset {
    solow_dataset(&synthetic_rows(98, BETA, 4.6, 0.35, seed), 0.05).unwrap()
}

fn config() -> SolowConfig {
    let mut cfg = SolowConfig::new(PathBuf::from("unused.csv"));
    cfg.lower_ratio = 1e-6;
    cfg
}

fn full_system(cfg: &SolowConfig) -> RestrictionSystem {
    RestrictionSystem::parse(&cfg.restriction_texts(), 3, &SigmaSpec::Identity).unwrap()
}

#[test]
fn restricted_fit_obeys_the_restriction() {
    let r_mat = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]);
    for seed in 0..10 {
        let data = sample(seed);
        let rols = restricted_ols(&data, &r_mat, &DVector::zeros(1)).unwrap();
        assert!((rols[1] + rols[2]).abs() <= 1e-12);
        assert!(data.r_squared(&rols) <= data.r_squared(&fit_unconstrained(&data)));
    }
}

#[test]
fn soft_estimate_tends_to_restricted_ols() {
    let data = sample(3);
    let r_mat = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]);
    let rols = restricted_ols(&data, &r_mat, &DVector::zeros(1)).unwrap();
    let system =
        RestrictionSystem::parse(&["theta[1] + theta[2] = 0"], 3, &SigmaSpec::Identity).unwrap();
    let loss = LeastSquares::new(LossScale::Mean);
    let solver = KktSolver::new(&data, &loss, &system, SolverOptions::default()).unwrap();
    let dist: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10]
        .iter()
        .map(|&c| (&solver.solve(c, None).unwrap().theta - &rols).amax())
        .collect();
    assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
    assert!(dist[4] < 1e-4);
}

#[test]
fn unrestricted_slopes_recover_the_elasticity() {
    let cfg = config();
    let mut hits = 0;
    for seed in 0..20 {
        let data = sample(100 + seed);
        let rep = run_solow_on(&data, &full_system(&cfg), &cfg).unwrap();
        let se = rep.unrestricted.se.as_ref().unwrap();
        let t = &rep.unrestricted.theta;
        if (t[1] - BETA).abs() <= 3.0 * se[1] && (t[2] + BETA).abs() <= 3.0 * se[2] {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn report_is_consistent() {
    let cfg = config();
    let data = sample(7);
    let rep = run_solow_on(&data, &full_system(&cfg), &cfg).unwrap();
    assert_eq!(rep.observations, 98);
    assert_eq!(rep.restrictions.len(), 3);
    assert_eq!(rep.columns[2], "ln(n+0.05)");
    assert!(rep.restricted.r_squared <= rep.unrestricted.r_squared);
    assert!(rep.c_hat > 0.0 && rep.c_hat <= cfg.c0);
    assert!(rep.wald_f.p_value > 0.0 && rep.wald_f.p_value < 1.0);
    // same statistic, heavier-tailed reference
    assert!(rep.wald_f.p_value > rep.wald_chi_square.p_value);
    assert!((rep.risk - rep.bias_proxy - rep.var_proxy).abs() <= 1e-12 * rep.risk.max(1.0));
    let mut ranks: Vec<usize> = rep.isp.iter().map(|r| r.rank).collect();
    ranks.sort();
    assert_eq!(ranks, vec![1, 2, 3]);
}
