//! Inner problem: minimize the loss subject to `h(theta) <= c`.
//!
//! The binding regime is solved by a safeguarded scalar root-find on the
//! multiplier, `m(lambda) = h(theta(lambda)) - c`, where `theta(lambda)`
//! minimizes the Lagrangian. For least squares with affine restrictions the
//! Lagrangian minimizer has a closed form in the generalized eigenbasis of
//! `(H, Q)`, so each evaluation of `m` costs O(p). Otherwise `theta(lambda)` is
//! found by damped Newton.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_unconstrained, Dataset, Loss};
use crate::restriction::RestrictionSystem;

/// Upper bracket search gives up beyond this multiplier.
const MAX_LAMBDA: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub stationarity_tol: f64,
    /// Relative to `1 + c`.
    pub constraint_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            stationarity_tol: 1e-10,
            constraint_tol: 1e-10,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSolution {
    pub c: f64,
    pub theta: DVector<f64>,
    pub lambda: f64,
    pub active: bool,
    /// `||grad phi + lambda grad h||_inf` at the returned point.
    pub kkt_residual: f64,
    pub h_value: f64,
    pub iterations: usize,
}

impl KktSolution {
    /// Checks the four solution invariants at the library's reporting tolerance.
    pub fn check_invariants(&self, grad_h_inf: f64) -> std::result::Result<(), String> {
        let tol = 1e-8 * (1.0 + self.c);
        if !(self.lambda >= 0.0) {
            return Err(format!("negative multiplier {}", self.lambda));
        }
        if self.active != (self.lambda > 0.0) {
            return Err(format!(
                "active = {} with lambda = {}",
                self.active, self.lambda
            ));
        }
        let slack = (self.lambda * (self.h_value - self.c)).abs();
        if slack >= tol {
            return Err(format!("complementary slackness violated: {slack:e}"));
        }
        if self.h_value > self.c + tol {
            return Err(format!("infeasible: h = {} > c = {}", self.h_value, self.c));
        }
        if self.kkt_residual >= 1e-8 * (1.0 + grad_h_inf) {
            return Err(format!("stationarity residual {:e}", self.kkt_residual));
        }
        Ok(())
    }
}

/// Closed-form Lagrangian path for least squares with `g = R theta - r`.
///
/// With `H = L L'` and `L^-1 Q L^-T = U D U'`, `W = L^-T U` diagonalizes both
/// `H` and `Q = R' Sigma^-1 R`; then `theta(lambda) = W z` with
/// `z_k = (beta_k + 2 lambda gamma_k) / (1 + 2 lambda d_k)`.
#[derive(Debug, Clone)]
struct AffineLs {
    w: DMatrix<f64>,
    d: DVector<f64>,
    beta: DVector<f64>,
    gamma: DVector<f64>,
    rho0: f64,
}

impl AffineLs {
    fn new(data: &Dataset, kappa: f64, system: &RestrictionSystem) -> Option<Self> {
        let affine = system.affine()?;
        let l = data.design().gram_chol().l() * kappa.sqrt();
        let sir = system.sigma_inv_apply_mat(&affine.r_mat);
        let q = affine.r_mat.tr_mul(&sir);
        let s = sir.tr_mul(&affine.r_vec);
        let rho0 = affine.r_vec.dot(&system.sigma_inv_apply(&affine.r_vec));
        let linv_q = l.solve_lower_triangular(&q)?;
        let c = l.solve_lower_triangular(&linv_q.transpose())?;
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let w = l.transpose().solve_upper_triangular(&eig.eigenvectors)?;
        let d = eig.eigenvalues.map(|v| v.max(0.0));
        let b = data.xty() * kappa;
        let beta = w.tr_mul(&b);
        let gamma = w.tr_mul(&s);
        Some(AffineLs {
            w,
            d,
            beta,
            gamma,
            rho0,
        })
    }

    fn z(&self, lambda: f64) -> DVector<f64> {
        DVector::from_fn(self.d.len(), |k, _| {
            (self.beta[k] + 2.0 * lambda * self.gamma[k]) / (1.0 + 2.0 * lambda * self.d[k])
        })
    }

    /// `(h(theta(lambda)), dh/dlambda)` in the eigenbasis.
    fn h_and_slope(&self, lambda: f64) -> (f64, f64, DVector<f64>) {
        let z = self.z(lambda);
        let mut h = self.rho0;
        let mut slope = 0.0;
        for k in 0..z.len() {
            let gz = self.d[k] * z[k] - self.gamma[k];
            h += self.d[k] * z[k] * z[k] - 2.0 * self.gamma[k] * z[k];
            slope -= 4.0 * gz * gz / (1.0 + 2.0 * lambda * self.d[k]);
        }
        (h.max(0.0), slope, z)
    }

    fn theta(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.w * z
    }
}

/// Solver bound to one dataset, loss and restriction system. Holds the
/// unconstrained fit and, when available, the closed-form eigenbasis.
pub struct KktSolver<'a> {
    data: &'a Dataset,
    loss: &'a dyn Loss,
    system: &'a RestrictionSystem,
    opts: SolverOptions,
    theta_tilde: DVector<f64>,
    h_tilde: f64,
    fast: Option<AffineLs>,
}

impl<'a> KktSolver<'a> {
    pub fn new(
        data: &'a Dataset,
        loss: &'a dyn Loss,
        system: &'a RestrictionSystem,
        opts: SolverOptions,
    ) -> Result<Self> {
        if system.dim() != data.p() {
            return Err(Error::Dimension(format!(
                "restrictions are over {} parameters, design has {} columns",
                system.dim(),
                data.p()
            )));
        }
        let fast = loss
            .as_least_squares()
            .and_then(|ls| AffineLs::new(data, ls.kappa(), system));
        let mut solver = KktSolver {
            data,
            loss,
            system,
            opts,
            theta_tilde: DVector::zeros(data.p()),
            h_tilde: 0.0,
            fast,
        };
        solver.theta_tilde = match (&solver.fast, loss.as_least_squares()) {
            (Some(f), _) => f.theta(&f.beta),
            (None, Some(_)) => fit_unconstrained(data),
            (None, None) => {
                let start = DVector::zeros(data.p());
                solver.lagrangian_min(0.0, &start, f64::NAN)?.0
            }
        };
        solver.h_tilde = system.eval_h(&solver.theta_tilde)?;
        Ok(solver)
    }

    pub fn theta_tilde(&self) -> &DVector<f64> {
        &self.theta_tilde
    }

    pub fn h_tilde(&self) -> f64 {
        self.h_tilde
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn loss(&self) -> &dyn Loss {
        self.loss
    }

    pub fn system(&self) -> &RestrictionSystem {
        self.system
    }

    pub fn uses_closed_form(&self) -> bool {
        self.fast.is_some()
    }

    pub fn solve(&self, c: f64, warm: Option<&KktSolution>) -> Result<KktSolution> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InfeasibleTolerance(c));
        }
        if self.h_tilde <= c {
            return self.finish(c, self.theta_tilde.clone(), 0.0, 0);
        }
        match &self.fast {
            Some(f) => self.solve_affine(f, c, warm),
            None => self.solve_general(c, warm),
        }
    }

    /// Warm-started solves along an ascending grid.
    pub fn solve_path(&self, grid: &[f64]) -> Result<Vec<KktSolution>> {
        check_grid(grid)?;
        let mut out: Vec<KktSolution> = Vec::with_capacity(grid.len());
        for &c in grid {
            let sol = self.solve(c, out.last())?;
            out.push(sol);
        }
        Ok(out)
    }

    fn constraint_tol(&self, c: f64) -> f64 {
        self.opts.constraint_tol * (1.0 + c)
    }

    fn initial_lambda(&self, c: f64, warm: Option<&KktSolution>) -> Result<f64> {
        if let Some(w) = warm.filter(|w| w.active && w.lambda.is_finite()) {
            return Ok(w.lambda);
        }
        // first-order expansion around theta_tilde: h(lambda) ~ h_tilde - lambda a'H^-1 a
        let a = self.system.eval_h_grad(&self.theta_tilde)?;
        let hess = self.loss.hessian(self.data, &self.theta_tilde)?;
        let slope = match Cholesky::new(hess) {
            Some(ch) => a.dot(&ch.solve(&a)),
            None => a.norm_squared(),
        };
        let guess = (self.h_tilde - c) / slope;
        Ok(if guess.is_finite() && guess > 0.0 {
            guess
        } else {
            1.0
        })
    }

    fn solve_affine(
        &self,
        f: &AffineLs,
        c: f64,
        warm: Option<&KktSolution>,
    ) -> Result<KktSolution> {
        let tol = self.constraint_tol(c);
        // target well inside the tolerance; Newton converges quadratically so
        // the extra digits cost one or two O(p) steps
        let target = 1e-3 * tol;
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        let mut lambda = self.initial_lambda(c, warm)?;
        let mut best: Option<(f64, f64)> = None;
        for it in 1..=self.opts.max_iterations {
            let (h, slope, z) = f.h_and_slope(lambda);
            if hi.is_infinite() && lambda > MAX_LAMBDA && h > c {
                return Err(Error::Unreachable { c, h });
            }
            let m = h - c;
            if best.is_none_or(|(_, bm)| m.abs() < bm.abs()) {
                best = Some((lambda, m));
            }
            // scaled by the multiplier so lambda |h - c| meets the target too
            if m.abs() * lambda.max(1.0) <= target
                || (m.abs() <= tol && hi - lo <= 4.0 * f64::EPSILON * hi)
            {
                return self.finish(c, f.theta(&z), lambda, it);
            }
            if m > 0.0 {
                lo = lambda;
            } else {
                hi = lambda;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi && m.abs() <= tol {
                return self.finish(c, f.theta(&z), lambda, it);
            }
            lambda = next_lambda(lambda, m, slope, lo, hi);
        }
        let (lambda, m) = best.unwrap_or((lambda, f64::INFINITY));
        if m.abs() <= tol {
            let z = f.z(lambda);
            return self.finish(c, f.theta(&z), lambda, self.opts.max_iterations);
        }
        Err(Error::NonConvergence {
            c,
            iterations: self.opts.max_iterations,
            residual: m.abs(),
            stationarity: 0.0,
        })
    }

    fn solve_general(&self, c: f64, warm: Option<&KktSolution>) -> Result<KktSolution> {
        let tol = self.constraint_tol(c);
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        let mut lambda = self.initial_lambda(c, warm)?;
        let mut theta = match warm {
            Some(w) => w.theta.clone(),
            None => self.theta_tilde.clone(),
        };
        let mut last_residual = f64::INFINITY;
        let mut last_stat = 0.0;
        // last iterates with h < c and h > c
        let mut above: Option<(DVector<f64>, f64)> = None;
        let mut below: Option<(DVector<f64>, f64)> = None;
        for it in 1..=self.opts.max_iterations {
            if hi.is_infinite() && lambda > MAX_LAMBDA {
                // the Lagrangian minimizer has settled on a local minimum of h above c
                return Err(Error::Unreachable {
                    c,
                    h: self.system.eval_h(&theta)?,
                });
            }
            let (th, a_mat, stat) = self.lagrangian_min(lambda, &theta, c)?;
            theta = th;
            last_stat = stat;
            let ev = self.system.eval_all(&theta)?;
            let m = ev.h - c;
            last_residual = m.abs();
            if m.abs() * lambda.max(1.0) <= 1e-2 * tol {
                return self.finish(c, theta, lambda, it);
            }
            if m.abs() <= 1e-4 * (1.0 + c) {
                if let Some((th, lam)) = self.polish(&theta, lambda, c, tol)? {
                    return self.finish(c, th, lam, it);
                }
            }
            if m > 0.0 {
                lo = lambda;
                below = Some((theta.clone(), lambda));
            } else {
                hi = lambda;
                above = Some((theta.clone(), lambda));
            }
            if hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi {
                if m.abs() <= tol {
                    return self.finish(c, theta, lambda, it);
                }
                // h jumps across c between two minimizers of the Lagrangian; the
                // constrained optimum is a saddle of it, so go at the full system
                for (th, lam) in [&above, &below].into_iter().flatten() {
                    if let Some((th, lam)) = self.polish(th, *lam, c, tol)? {
                        return self.finish(c, th, lam, it);
                    }
                }
                return Err(Error::NonConvergence {
                    c,
                    iterations: it,
                    residual: m.abs(),
                    stationarity: stat,
                });
            }
            // dh/dlambda = -a' A^-1 a when A is positive definite
            let slope = match Cholesky::new(a_mat) {
                Some(ch) => -ev.h_grad.dot(&ch.solve(&ev.h_grad)),
                None => f64::NAN,
            };
            lambda = next_lambda(lambda, m, slope, lo, hi);
        }
        Err(Error::NonConvergence {
            c,
            iterations: self.opts.max_iterations,
            residual: last_residual,
            stationarity: last_stat,
        })
    }

    /// Damped Newton on the full system `grad phi + lambda grad h = 0`,
    /// `h = c`, backtracking on the residual norm with `lambda > 0`. `None`
    /// when no step reduces the residual or the bordered matrix is singular;
    /// the caller then keeps bracketing.
    fn polish(
        &self,
        start: &DVector<f64>,
        lambda0: f64,
        c: f64,
        tol: f64,
    ) -> Result<Option<(DVector<f64>, f64)>> {
        let p = start.len();
        let residual = |theta: &DVector<f64>, lambda: f64| -> Result<(DVector<f64>, f64, f64)> {
            let ev = self.system.eval_all(theta)?;
            let grad = self.loss.gradient(self.data, theta)? + &ev.h_grad * lambda;
            let m = ev.h - c;
            let norm = (grad.norm_squared() + m * m).sqrt();
            Ok((grad, m, norm))
        };
        let mut theta = start.clone();
        let mut lambda = lambda0;
        let (mut grad, mut m, mut norm) = residual(&theta, lambda)?;
        for _ in 0..50 {
            let ev = self.system.eval_all(&theta)?;
            let scale = 1.0 + lambda * ev.h_grad.amax();
            if m.abs() * lambda.max(1.0) <= 1e-2 * tol
                && grad.amax() <= self.opts.stationarity_tol * scale
            {
                return Ok(Some((theta, lambda)));
            }
            let mut kkt = DMatrix::zeros(p + 1, p + 1);
            let hess = self.loss.hessian(self.data, &theta)? + &ev.h_hess * lambda;
            kkt.view_mut((0, 0), (p, p)).copy_from(&hess);
            kkt.view_mut((0, p), (p, 1)).copy_from(&ev.h_grad);
            kkt.view_mut((p, 0), (1, p))
                .copy_from(&ev.h_grad.transpose());
            let mut rhs = DVector::zeros(p + 1);
            rhs.rows_mut(0, p).copy_from(&(-&grad));
            rhs[p] = -m;
            let Some(step) = kkt.lu().solve(&rhs) else {
                return Ok(None);
            };
            if !step.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            let mut t = 1.0;
            while lambda + t * step[p] <= 0.0 && t > 1e-12 {
                t *= 0.5;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &theta + step.rows(0, p) * t;
                let lam = lambda + t * step[p];
                let (g, mc, nc) = residual(&cand, lam)?;
                if lam > 0.0 && nc.is_finite() && nc <= (1.0 - 1e-4 * t) * norm {
                    theta = cand;
                    lambda = lam;
                    (grad, m, norm) = (g, mc, nc);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Ok(None);
            }
        }
        Ok(None)
    }

    /// Damped Newton on `phi(theta) + lambda h(theta)`. Returns the minimizer,
    /// the unmodified Lagrangian Hessian there, and the final gradient norm.
    fn lagrangian_min(
        &self,
        lambda: f64,
        start: &DVector<f64>,
        c: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let objective = |theta: &DVector<f64>| -> Result<f64> {
            let v = self.loss.value(self.data, theta)?;
            Ok(if lambda > 0.0 {
                v + lambda * self.system.eval_h(theta)?
            } else {
                v
            })
        };
        let mut theta = start.clone();
        let mut f = objective(&theta)?;
        for _ in 0..self.opts.max_iterations {
            let ev = self.system.eval_all(&theta)?;
            let grad = self.loss.gradient(self.data, &theta)? + &ev.h_grad * lambda;
            let hess = self.loss.hessian(self.data, &theta)? + &ev.h_hess * lambda;
            let grad_norm = grad.amax();
            let scale = 1.0 + lambda * ev.h_grad.amax();
            // gradients below this are rounding noise from the Hessian
            let floor = 1e3 * f64::EPSILON * hess.amax() * (1.0 + theta.amax());
            if grad_norm <= (1e-2 * self.opts.stationarity_tol * scale).max(floor) {
                return Ok((theta, hess, grad_norm));
            }
            let (step, modified) = newton_direction(&hess, &grad)?;
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &theta + &step * t;
                let fc = objective(&cand)?;
                let sufficient = fc <= f + 1e-4 * t * slope;
                // near the optimum the objective stalls at rounding level;
                // accept a pure Newton step that shrinks the gradient instead
                let gradient_progress = !modified && t == 1.0 && {
                    let ev_c = self.system.eval_all(&cand)?;
                    let g_c = self.loss.gradient(self.data, &cand)? + &ev_c.h_grad * lambda;
                    g_c.amax() < 0.5 * grad_norm
                };
                if sufficient || gradient_progress {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if grad_norm <= (self.opts.stationarity_tol * scale).max(floor) {
                    return Ok((theta, hess, grad_norm));
                }
                break;
            }
        }
        let ev = self.system.eval_all(&theta)?;
        let grad = self.loss.gradient(self.data, &theta)? + &ev.h_grad * lambda;
        let hess = self.loss.hessian(self.data, &theta)? + &ev.h_hess * lambda;
        let grad_norm = grad.amax();
        let floor = 1e3 * f64::EPSILON * hess.amax() * (1.0 + theta.amax());
        if grad_norm <= (self.opts.stationarity_tol * (1.0 + lambda * ev.h_grad.amax())).max(floor)
        {
            return Ok((theta, hess, grad_norm));
        }
        Err(Error::NonConvergence {
            c,
            iterations: self.opts.max_iterations,
            residual: (ev.h - c).abs(),
            stationarity: grad_norm,
        })
    }

    fn finish(
        &self,
        c: f64,
        theta: DVector<f64>,
        lambda: f64,
        iterations: usize,
    ) -> Result<KktSolution> {
        let ev = self.system.eval_all(&theta)?;
        let grad = self.loss.gradient(self.data, &theta)? + &ev.h_grad * lambda;
        let kkt_residual = grad.amax();
        if kkt_residual >= 1e-8 * (1.0 + ev.h_grad.amax()) {
            return Err(Error::NonConvergence {
                c,
                iterations,
                residual: (ev.h - c).max(0.0),
                stationarity: kkt_residual,
            });
        }
        Ok(KktSolution {
            c,
            theta,
            lambda,
            active: lambda > 0.0,
            kkt_residual,
            h_value: ev.h,
            iterations,
        })
    }
}

/// Safeguarded Newton update for a decreasing `m(lambda)` bracketed by `(lo, hi)`.
fn next_lambda(lambda: f64, m: f64, slope: f64, lo: f64, hi: f64) -> f64 {
    let newton = if slope < 0.0 && slope.is_finite() {
        lambda - m / slope
    } else {
        f64::NAN
    };
    if hi.is_infinite() {
        // still looking for an upper bracket: grow at least geometrically
        if newton.is_finite() && newton > lambda {
            return newton.max(lambda * 1.5).min(lambda * 1e3);
        }
        return (2.0 * lambda).max(f64::MIN_POSITIVE);
    }
    if newton.is_finite() && newton > lo && newton < hi {
        newton
    } else if lo > 0.0 && hi / lo > 1e3 {
        // geometric bisection when the bracket spans orders of magnitude
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// Newton step with a diagonal shift when the Hessian is not positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = Cholesky::new(hess.clone()) {
        return Ok((-ch.solve(grad), false));
    }
    let scale = hess.amax().max(1.0);
    let mut mu = 1e-8 * scale;
    for _ in 0..80 {
        let mut shifted = hess.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += mu;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(shifted) {
            return Ok((-ch.solve(grad), true));
        }
        mu *= 4.0;
    }
    Err(Error::Singular(
        "Lagrangian Hessian could not be regularized".into(),
    ))
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("tolerance grid is empty".into()));
    }
    if grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::InfeasibleTolerance(
            grid.iter()
                .copied()
                .find(|c| !(*c > 0.0) || !c.is_finite())
                .unwrap(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "tolerance grid must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// One-shot solve at a single tolerance.
pub fn solve_inner(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    c: f64,
    warm: Option<&KktSolution>,
) -> Result<KktSolution> {
    KktSolver::new(data, loss, system, SolverOptions::default())?.solve(c, warm)
}

/// Warm-started path over an ascending grid.
pub fn solve_path(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    grid: &[f64],
) -> Result<Vec<KktSolution>> {
    KktSolver::new(data, loss, system, SolverOptions::default())?.solve_path(grid)
}
