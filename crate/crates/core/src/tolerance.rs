//! Selection of the tolerance `c` by minimizing the bias-plus-variance risk
//! proxy over a grid.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{bias_direction, lagrangian_hessian, sandwich, trace_v1};
use crate::kkt::{check_grid, KktSolution, KktSolver};
use crate::model::{score_covariance, Dataset, Loss};
use crate::restriction::RestrictionSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub c0: f64,
    pub size: usize,
    /// The grid spans `(c0 * lower_ratio, c0]`.
    pub lower_ratio: f64,
    /// Insert `h(theta_tilde)` when it falls inside the grid range.
    pub include_kink: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c0: 1.0,
            size: 200,
            lower_ratio: 1e-3,
            include_kink: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) || !self.c0.is_finite() {
            return Err(Error::InfeasibleTolerance(self.c0));
        }
        if self.size < 2 {
            return Err(Error::Config(format!(
                "grid size must be at least 2, got {}",
                self.size
            )));
        }
        if !(self.lower_ratio > 0.0 && self.lower_ratio < 1.0) {
            return Err(Error::Config(format!(
                "grid lower ratio must be in (0, 1), got {}",
                self.lower_ratio
            )));
        }
        Ok(())
    }

    /// Geometric grid `c0 * lower_ratio^((size-1-k)/size)`, `k = 0..size`,
    /// plus the activation point when it is interior.
    pub fn points(&self, h_tilde: Option<f64>) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.size as f64;
        let ln_r = self.lower_ratio.ln();
        let mut grid: Vec<f64> = (0..self.size)
            .map(|k| self.c0 * (ln_r * (n - 1.0 - k as f64) / n).exp())
            .collect();
        grid[self.size - 1] = self.c0;
        if let Some(h) = h_tilde.filter(|_| self.include_kink) {
            if h > self.c0 * self.lower_ratio && h < self.c0 && !grid.contains(&h) {
                let pos = grid.partition_point(|&c| c < h);
                grid.insert(pos, h);
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub grid: Vec<f64>,
    pub bias: Vec<f64>,
    pub var: Vec<f64>,
    pub total: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
    pub c_hat: f64,
    pub c_hat_index: usize,
    pub c0: f64,
}

impl RiskCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "bias", "var", "total", "lambda", "active"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                format!("{:e}", self.grid[i]),
                format!("{:e}", self.bias[i]),
                format!("{:e}", self.var[i]),
                format!("{:e}", self.total[i]),
                format!("{:e}", self.lambda[i]),
                (self.active[i] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Risk proxy with the pieces that do not depend on `c` computed once:
/// `||H^-1 a||^2` at the unconstrained fit and the unconstrained sandwich trace.
pub struct RiskEvaluator<'s, 'a> {
    solver: &'s KktSolver<'a>,
    bias_norm2: f64,
    inactive_var: f64,
}

impl<'s, 'a> RiskEvaluator<'s, 'a> {
    pub fn new(solver: &'s KktSolver<'a>) -> Result<Self> {
        let tt = solver.theta_tilde();
        let dir = bias_direction(tt, solver.data(), solver.loss(), solver.system())?;
        let n = solver.data().n() as f64;
        let inactive_var = sandwich(tt, solver.data(), solver.loss())?.trace() / n;
        Ok(RiskEvaluator {
            solver,
            bias_norm2: dir.norm_squared(),
            inactive_var,
        })
    }

    /// `(bias, var)` at a solution on this solver's path.
    pub fn evaluate(&self, sol: &KktSolution) -> Result<(f64, f64)> {
        if !sol.active {
            return Ok((0.0, self.inactive_var));
        }
        let bias = sol.lambda * sol.lambda * self.bias_norm2;
        let (data, loss, system) = (self.solver.data(), self.solver.loss(), self.solver.system());
        let (a_mat, a) = lagrangian_hessian(sol, data, loss, system)?;
        let s = score_covariance(loss, data, &sol.theta)?;
        let var = trace_v1(&a_mat, &a, &s, true)? / data.n() as f64;
        Ok((bias, var.max(0.0)))
    }
}

/// `(bias, var)` of the risk proxy at one solution.
pub fn risk_proxy(
    sol: &KktSolution,
    theta_tilde: &DVector<f64>,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
) -> Result<(f64, f64)> {
    let n = data.n() as f64;
    if !sol.active {
        return Ok((0.0, sandwich(theta_tilde, data, loss)?.trace() / n));
    }
    let dir = bias_direction(theta_tilde, data, loss, system)?;
    let bias = sol.lambda * sol.lambda * dir.norm_squared();
    let blocks = crate::inference::compute_blocks(sol, data, loss, system)?;
    Ok((bias, blocks.v1.trace() / n))
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub curve: RiskCurve,
    pub solution: KktSolution,
}

/// Solve along `grid`, evaluate the proxy and pick the minimizer, breaking
/// ties toward larger `c`.
pub fn select_on_grid(solver: &KktSolver, grid: &[f64]) -> Result<Selection> {
    check_grid(grid)?;
    let eval = RiskEvaluator::new(solver)?;
    let path = solver.solve_path(grid)?;
    let mut curve = RiskCurve {
        grid: grid.to_vec(),
        bias: Vec::with_capacity(grid.len()),
        var: Vec::with_capacity(grid.len()),
        total: Vec::with_capacity(grid.len()),
        lambda: Vec::with_capacity(grid.len()),
        active: Vec::with_capacity(grid.len()),
        c_hat: f64::NAN,
        c_hat_index: 0,
        c0: *grid.last().unwrap(),
    };
    let mut best = f64::INFINITY;
    for (i, sol) in path.iter().enumerate() {
        let (b, v) = eval.evaluate(sol)?;
        let t = b + v;
        curve.bias.push(b);
        curve.var.push(v);
        curve.total.push(t);
        curve.lambda.push(sol.lambda);
        curve.active.push(sol.active);
        if t <= best {
            best = t;
            curve.c_hat_index = i;
        }
    }
    curve.c_hat = grid[curve.c_hat_index];
    let solution = path[curve.c_hat_index].clone();
    Ok(Selection { curve, solution })
}

pub fn select_tolerance(solver: &KktSolver, spec: &GridSpec) -> Result<Selection> {
    let grid = spec.points(Some(solver.h_tilde()))?;
    select_on_grid(solver, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::SolverOptions;
    use crate::model::LeastSquares;
    use crate::restriction::SigmaSpec;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn setup(seed: u64, slope: f64) -> (Dataset, RestrictionSystem) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let mut x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        x.column_mut(0).fill(1.0);
        let theta = DVector::from_column_slice(&[0.1, slope, -slope]);
        let y = &x * &theta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::from_matrix(y, x, true).unwrap();
        let sys =
            RestrictionSystem::parse(&["theta[1] = 0", "theta[2] = 0"], 3, &SigmaSpec::Identity)
                .unwrap();
        (data, sys)
    }

    #[test]
    fn grid_shape() {
        let spec = GridSpec {
            c0: 2.0,
            size: 50,
            ..Default::default()
        };
        let g = spec.points(None).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(*g.last().unwrap(), 2.0);
        assert!(g[0] > 2e-3);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let ratio = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-12));
        let with_kink = spec.points(Some(0.5)).unwrap();
        assert_eq!(with_kink.len(), 51);
        assert!(with_kink.contains(&0.5));
        assert_eq!(spec.points(Some(5.0)).unwrap().len(), 50);
        assert!(GridSpec { size: 1, ..spec }.points(None).is_err());
        assert!(GridSpec { c0: 0.0, ..spec }.points(None).is_err());
    }

    #[test]
    fn inactive_everywhere_picks_largest() {
        let (data, sys) = setup(1, 0.3);
        let loss = LeastSquares::default();
        let solver = KktSolver::new(&data, &loss, &sys, SolverOptions::default()).unwrap();
        let c0 = 10.0 * solver.h_tilde();
        let grid: Vec<f64> = (1..=10)
            .map(|k| c0 * 0.5 * (1.0 + k as f64 / 10.0))
            .collect();
        let sel = select_on_grid(&solver, &grid).unwrap();
        assert_eq!(sel.curve.c_hat, c0);
        assert!(sel.curve.bias.iter().all(|&b| b == 0.0));
        assert!(sel.curve.total.windows(2).all(|w| w[0] == w[1]));
        assert!(!sel.solution.active);
    }

    #[test]
    fn curve_invariants_and_shortcut_agreement() {
        let (data, sys) = setup(2, 0.05);
        let loss = LeastSquares::default();
        let solver = KktSolver::new(&data, &loss, &sys, SolverOptions::default()).unwrap();
        let spec = GridSpec {
            c0: 1.0,
            size: 60,
            ..Default::default()
        };
        let sel = select_tolerance(&solver, &spec).unwrap();
        let c = &sel.curve;
        for i in 0..c.grid.len() {
            assert_eq!(c.total[i], c.bias[i] + c.var[i]);
            assert!(c.bias[i] >= 0.0 && c.var[i] >= 0.0);
        }
        let min = c.total.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(c.total[c.c_hat_index], min);
        // the one-shot proxy agrees with the cached evaluator
        let path = solver.solve_path(&c.grid).unwrap();
        for (i, sol) in path.iter().enumerate().step_by(7) {
            let (b, v) = risk_proxy(sol, solver.theta_tilde(), &data, &loss, &sys).unwrap();
            assert!((b - c.bias[i]).abs() <= 1e-12 * (1.0 + b));
            assert!((v - c.var[i]).abs() <= 1e-10 * v);
        }
        // bias proxy non-increasing in c for ridge-type restrictions
        assert!(c.bias.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (data, sys) = setup(3, 0.2);
        let loss = LeastSquares::default();
        let solver = KktSolver::new(&data, &loss, &sys, SolverOptions::default()).unwrap();
        let sel = select_tolerance(
            &solver,
            &GridSpec {
                size: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        sel.curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("c,bias,var,total,lambda,active\n"));
        assert_eq!(text.lines().count(), sel.curve.grid.len() + 1);
    }
}
