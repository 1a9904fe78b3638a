//! Asymptotic variance blocks from the linearized KKT system, debiasing,
//! confidence intervals and Wald tests.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_sf, f_sf, normal_critical};
use crate::error::{Error, Result};
use crate::kkt::KktSolution;
use crate::model::{score_covariance, Dataset, Loss};
use crate::restriction::RestrictionSystem;

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticBlocks {
    /// Lagrangian Hessian `H + lambda Hess(h)` at the solution.
    pub a_mat: DMatrix<f64>,
    /// Constraint gradient `grad h` at the solution.
    pub a: DVector<f64>,
    /// Projected inverse Hessian; the plain inverse Hessian when inactive.
    pub m: DMatrix<f64>,
    pub sigma_psi: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DVector<f64>,
    pub v3: f64,
    pub scale_n: usize,
    pub active: bool,
}

/// Inverse of a symmetric matrix via its eigendecomposition, rejecting
/// condition numbers above `1e12`.
pub(crate) fn symmetric_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "{what}: condition number {:.3e}",
            max / min
        )));
    }
    let inv_d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let inv = &eig.eigenvectors * inv_d * eig.eigenvectors.transpose();
    Ok(symmetrize(inv))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `H(theta) + lambda Hess(h)(theta)` and `grad h(theta)`.
pub fn lagrangian_hessian(
    sol: &KktSolution,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let ev = system.eval_all(&sol.theta)?;
    let mut a_mat = loss.hessian(data, &sol.theta)?;
    if sol.lambda > 0.0 {
        a_mat += &ev.h_hess * sol.lambda;
    }
    Ok((a_mat, ev.h_grad))
}

pub fn compute_blocks(
    sol: &KktSolution,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
) -> Result<AsymptoticBlocks> {
    let (a_mat, a) = lagrangian_hessian(sol, data, loss, system)?;
    let sigma_psi = score_covariance(loss, data, &sol.theta)?;
    blocks_from_parts(a_mat, a, sigma_psi, sol.active, data.n())
}

pub fn blocks_from_parts(
    a_mat: DMatrix<f64>,
    a: DVector<f64>,
    sigma_psi: DMatrix<f64>,
    active: bool,
    n: usize,
) -> Result<AsymptoticBlocks> {
    let a_inv = symmetric_inverse(&a_mat, "Lagrangian Hessian")?;
    let p = a.len();
    let (m, v2, v3) = if active {
        let u = &a_inv * &a;
        let s = a.dot(&u);
        if !(s > 0.0) {
            return Err(Error::SecondOrder(s));
        }
        let m = symmetrize(&a_inv - &u * u.transpose() / s);
        let v2 = -(&m * (&sigma_psi * &u)) / s;
        let v3 = u.dot(&(&sigma_psi * &u)) / (s * s);
        (m, v2, v3)
    } else {
        (a_inv, DVector::zeros(p), 0.0)
    };
    let v1 = symmetrize(&m * &sigma_psi * &m);
    for k in 0..p {
        if v1[(k, k)] < 0.0 {
            return Err(Error::NegativeVariance(k));
        }
    }
    Ok(AsymptoticBlocks {
        a_mat,
        a,
        m,
        sigma_psi,
        v1,
        v2,
        v3,
        scale_n: n,
        active,
    })
}

/// `tr(V1)` without assembling the other blocks. Uses a Cholesky inverse and
/// falls back to the full computation when `A` is not positive definite.
pub(crate) fn trace_v1(
    a_mat: &DMatrix<f64>,
    a: &DVector<f64>,
    sigma_psi: &DMatrix<f64>,
    active: bool,
) -> Result<f64> {
    let Some(ch) = Cholesky::new(a_mat.clone()) else {
        let b = blocks_from_parts(a_mat.clone(), a.clone(), sigma_psi.clone(), active, 1)?;
        return Ok(b.v1.trace());
    };
    let mut m = ch.inverse();
    if active {
        let u = &m * a;
        let s = a.dot(&u);
        if !(s > 0.0) {
            return Err(Error::SecondOrder(s));
        }
        m -= &u * u.transpose() / s;
    }
    // tr(M S M) = sum_ij (M S)_ij M_ij for symmetric M
    let ms = &m * sigma_psi;
    Ok(ms.component_mul(&m).sum())
}

/// Covariance behind the debiased estimate's intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DebiasVariance {
    /// Delta method through the joint influence of `theta_hat`, `lambda_hat`
    /// and the bias direction evaluated at the unconstrained fit.
    #[default]
    Influence,
    /// `V1` at the selected tolerance.
    V1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    pub theta_db: DVector<f64>,
    pub bias_correction: DVector<f64>,
    pub variance: DebiasVariance,
    /// Asymptotic covariance of `sqrt(n) (theta_db - theta0)` under `variance`.
    pub covariance: DMatrix<f64>,
    pub se: DVector<f64>,
    /// `sqrt(diag(V1) / n)`, reported whatever `variance` is.
    pub se_v1: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub level: f64,
}

/// `H(theta_tilde)^-1 grad h(theta_tilde)`, the direction of the first-order bias.
pub fn bias_direction(
    theta_tilde: &DVector<f64>,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
) -> Result<DVector<f64>> {
    let h = loss.hessian(data, theta_tilde)?;
    let a = system.eval_h_grad(theta_tilde)?;
    let ch = Cholesky::new(h)
        .ok_or_else(|| Error::Singular("loss Hessian at the unconstrained fit".into()))?;
    Ok(ch.solve(&a))
}

/// Covariance of the debiased estimator from its linear influence
/// `K psi`, with
/// `K = -M + (H^-1 a_tilde)(A^-1 a)' / s - lambda H^-1 Hess(h)(theta_tilde) H^-1`.
/// The first term is `theta_hat`, the second the multiplier, the third the
/// bias direction moving with the unconstrained fit. Inactive: the sandwich.
pub fn debiased_covariance(
    sol: &KktSolution,
    theta_tilde: &DVector<f64>,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    blocks: &AsymptoticBlocks,
) -> Result<DMatrix<f64>> {
    if !blocks.active || sol.lambda <= 0.0 {
        return Ok(blocks.v1.clone());
    }
    let h = loss.hessian(data, theta_tilde)?;
    let h_inv = symmetric_inverse(&h, "loss Hessian at the unconstrained fit")?;
    let a_inv = symmetric_inverse(&blocks.a_mat, "Lagrangian Hessian")?;
    let u = &a_inv * &blocks.a;
    let s = blocks.a.dot(&u);
    let ev = system.eval_all(theta_tilde)?;
    let dir = &h_inv * &ev.h_grad;
    let k = -&blocks.m + &dir * u.transpose() / s - &h_inv * &ev.h_hess * &h_inv * sol.lambda;
    let v = symmetrize(&k * &blocks.sigma_psi * k.transpose());
    for j in 0..v.nrows() {
        if v[(j, j)] < 0.0 {
            return Err(Error::NegativeVariance(j));
        }
    }
    Ok(v)
}

/// `theta_db = theta_hat + lambda H^-1 a` with normal intervals.
#[allow(clippy::too_many_arguments)]
pub fn debias(
    sol: &KktSolution,
    theta_tilde: &DVector<f64>,
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    blocks: &AsymptoticBlocks,
    variance: DebiasVariance,
    level: f64,
) -> Result<DebiasedEstimate> {
    let bias_correction = if sol.lambda > 0.0 {
        bias_direction(theta_tilde, data, loss, system)? * sol.lambda
    } else {
        DVector::zeros(sol.theta.len())
    };
    let theta_db = &sol.theta + &bias_correction;
    let covariance = match variance {
        DebiasVariance::Influence => {
            debiased_covariance(sol, theta_tilde, data, loss, system, blocks)?
        }
        DebiasVariance::V1 => blocks.v1.clone(),
    };
    let se = standard_errors(&covariance, blocks.scale_n)?;
    let se_v1 = standard_errors(&blocks.v1, blocks.scale_n)?;
    let (ci_lower, ci_upper) = normal_intervals(&theta_db, &se, level)?;
    Ok(DebiasedEstimate {
        theta_db,
        bias_correction,
        variance,
        covariance,
        se,
        se_v1,
        ci_lower,
        ci_upper,
        level,
    })
}

/// Normal intervals `est +- z se` with `se_k = sqrt(V1[k,k] / n)`.
pub fn confidence_intervals(
    est: &DVector<f64>,
    blocks: &AsymptoticBlocks,
    level: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    standard_errors(&blocks.v1, blocks.scale_n)
        .and_then(|se| normal_intervals(est, &se, level).map(|(lo, hi)| (se, lo, hi)))
}

pub fn standard_errors(v: &DMatrix<f64>, n: usize) -> Result<DVector<f64>> {
    let mut se = DVector::zeros(v.nrows());
    for k in 0..v.nrows() {
        let d = v[(k, k)];
        if d < 0.0 || !d.is_finite() {
            return Err(Error::NegativeVariance(k));
        }
        se[k] = (d / n as f64).sqrt();
    }
    Ok(se)
}

pub fn normal_intervals(
    est: &DVector<f64>,
    se: &DVector<f64>,
    level: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let z = normal_critical(level);
    Ok((est - se * z, est + se * z))
}

/// Reference distribution for a Wald statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WaldReference {
    ChiSquare,
    /// `W / q ~ F(q, denom_df)`
    F {
        denom_df: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub reference: WaldReference,
    pub p_value: f64,
}

impl WaldResult {
    pub fn with_reference(statistic: f64, df: usize, reference: WaldReference) -> Self {
        let p_value = match reference {
            WaldReference::ChiSquare => chi2_sf(statistic, df as f64),
            WaldReference::F { denom_df } => f_sf(statistic / df as f64, df as f64, denom_df),
        };
        WaldResult {
            statistic,
            df,
            reference,
            p_value,
        }
    }
}

/// Unconstrained sandwich `H^-1 Sigma_psi H^-1` at `theta`.
pub fn sandwich(theta: &DVector<f64>, data: &Dataset, loss: &dyn Loss) -> Result<DMatrix<f64>> {
    let h_inv = symmetric_inverse(&loss.hessian(data, theta)?, "loss Hessian")?;
    let s = score_covariance(loss, data, theta)?;
    Ok(symmetrize(&h_inv * s * &h_inv))
}

/// `W = n g' [G V G']^-1 g` for the restrictions in `system` at the
/// unconstrained fit, with `V` the sandwich.
pub fn wald_test(
    system: &RestrictionSystem,
    theta_tilde: &DVector<f64>,
    data: &Dataset,
    loss: &dyn Loss,
    reference: WaldReference,
) -> Result<WaldResult> {
    let ev = system.eval_all(theta_tilde)?;
    let v = sandwich(theta_tilde, data, loss)?;
    let mid = symmetrize(&ev.jacobian * v * ev.jacobian.transpose());
    let mid_inv = symmetric_inverse(&mid, "Wald middle matrix")?;
    let w = data.n() as f64 * ev.g.dot(&(mid_inv * &ev.g));
    Ok(WaldResult::with_reference(
        w.max(0.0),
        system.q(),
        reference,
    ))
}
