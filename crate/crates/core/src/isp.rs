//! Individual shadow prices (ISPs), their covariance, and the plateau rule
//! that splits restrictions into an irrelevant low-magnitude block and the rest.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::chi2_sf;
use crate::error::Result;
use crate::inference::{symmetrize, AsymptoticBlocks};
use crate::kkt::KktSolution;
use crate::restriction::RestrictionSystem;

/// `ISP_j = 2 lambda sign(g_j) [Sigma^-1 g]_j` at the solution.
pub fn compute_isp(sol: &KktSolution, system: &RestrictionSystem) -> Result<DVector<f64>> {
    let q = system.q();
    if sol.lambda == 0.0 {
        return Ok(DVector::zeros(q));
    }
    let g = system.eval_g(&sol.theta)?;
    let sg = system.sigma_inv_apply(&g);
    Ok(DVector::from_fn(q, |j, _| {
        2.0 * sol.lambda * sign(g[j]) * sg[j]
    }))
}

/// Sign with `sign(0) = +1`.
fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Restrictions whose `|g_j|` is too close to zero for the sign map to be
/// locally constant.
pub fn sign_unstable(g: &DVector<f64>) -> Vec<usize> {
    let thr = 1e-8 * (1.0 + g.norm());
    (0..g.len()).filter(|&j| g[j].abs() < thr).collect()
}

/// Delta-method Jacobians of the ISP vector with respect to `theta` and `lambda`:
/// `J_theta = 2 lambda S Sigma^-1 G`, `J_lambda = 2 S Sigma^-1 g`.
pub fn isp_jacobians(
    sol: &KktSolution,
    system: &RestrictionSystem,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let ev = system.eval_all(&sol.theta)?;
    let q = system.q();
    let signs = DVector::from_fn(q, |j, _| sign(ev.g[j]));
    let mut j_theta = system.sigma_inv_apply_mat(&ev.jacobian) * (2.0 * sol.lambda);
    for (j, mut row) in j_theta.row_iter_mut().enumerate() {
        row *= signs[j];
    }
    let j_lambda = ev.sig_inv_g.component_mul(&signs) * 2.0;
    Ok((j_theta, j_lambda))
}

/// Full covariance `J_t V1 J_t' + J_t V2 J_l' + J_l V2' J_t' + V3 J_l J_l'`.
pub fn isp_covariance(
    blocks: &AsymptoticBlocks,
    sol: &KktSolution,
    system: &RestrictionSystem,
) -> Result<DMatrix<f64>> {
    let (jt, jl) = isp_jacobians(sol, system)?;
    let jt_v2 = &jt * &blocks.v2;
    let cross = &jt_v2 * jl.transpose();
    let cov = &jt * &blocks.v1 * jt.transpose()
        + &cross
        + cross.transpose()
        + &jl * jl.transpose() * blocks.v3;
    Ok(symmetrize(cov))
}

/// The `theta`-channel only, `J_t V1 J_t'`: the ISP covariance given the
/// multiplier.
pub fn isp_covariance_given_lambda(
    blocks: &AsymptoticBlocks,
    sol: &KktSolution,
    system: &RestrictionSystem,
) -> Result<DMatrix<f64>> {
    let (jt, _) = isp_jacobians(sol, system)?;
    Ok(symmetrize(&jt * &blocks.v1 * jt.transpose()))
}

/// Which ISP covariance drives the break and homogeneity statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlateauCovariance {
    /// `J_t V1 J_t'`. The shared multiplier scales every ISP alike and cancels
    /// from the ordering; conditioning on it keeps the contrasts informative.
    #[default]
    GivenLambda,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauOptions {
    pub screen_level: f64,
    pub covariance: PlateauCovariance,
    /// Smallest candidate plateau size.
    pub min_size: usize,
}

impl Default for PlateauOptions {
    fn default() -> Self {
        PlateauOptions {
            screen_level: 0.05,
            covariance: PlateauCovariance::GivenLambda,
            min_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauResult {
    /// Number of restrictions in the plateau, `m_hat`.
    pub cutoff: Option<usize>,
    /// `(m, B_m)` per candidate; `None` where the contrast variance vanishes.
    pub break_stats: Vec<(usize, Option<f64>)>,
    /// `(m, p-value)` of the homogeneity screen per candidate.
    pub screen_p_values: Vec<(usize, f64)>,
    pub admissible: Vec<usize>,
    pub diagnostic: Option<String>,
}

/// Ascending order of `|isp|`, ties by index.
pub fn ascending_order(isp: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..isp.len()).collect();
    order.sort_by(|&a, &b| isp[a].abs().total_cmp(&isp[b].abs()).then(a.cmp(&b)));
    order
}

/// Pseudo-inverse quadratic form `d' C^+ d` and the rank of `C`.
fn pinv_quadratic(c: &DMatrix<f64>, d: &DVector<f64>) -> (f64, usize) {
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let thr = 1e-12 * max;
    let proj = eig.eigenvectors.tr_mul(d);
    let mut w = 0.0;
    let mut rank = 0;
    for k in 0..d.len() {
        if eig.eigenvalues[k] > thr && max > 0.0 {
            w += proj[k] * proj[k] / eig.eigenvalues[k];
            rank += 1;
        }
    }
    (w, rank)
}

/// Break statistic `B_m = n Delta_m^2 / (w' Sigma w)` for each candidate `m`,
/// a homogeneity screen on adjacent contrasts inside the candidate block,
/// and `m_hat = argmax B_m` over the candidates passing the screen.
pub fn plateau_cutoff(
    isp: &DVector<f64>,
    sigma_isp: &DMatrix<f64>,
    n: usize,
    opts: &PlateauOptions,
) -> PlateauResult {
    let q = isp.len();
    let nf = n as f64;
    let order = ascending_order(isp);
    let mags: Vec<f64> = order.iter().map(|&j| isp[j].abs()).collect();
    let signs: Vec<f64> = order.iter().map(|&j| sign(isp[j])).collect();
    let mut result = PlateauResult {
        cutoff: None,
        break_stats: Vec::new(),
        screen_p_values: Vec::new(),
        admissible: Vec::new(),
        diagnostic: None,
    };
    if q < 2 {
        result.diagnostic = Some("fewer than two restrictions".into());
        return result;
    }
    let scale = sigma_isp.amax();
    for m in opts.min_size.max(1)..q {
        let low = mags[..m].iter().sum::<f64>() / m as f64;
        let high = mags[m..].iter().sum::<f64>() / (q - m) as f64;
        let delta = low - high;
        let mut w = DVector::zeros(q);
        for (l, &j) in order.iter().enumerate() {
            w[j] = if l < m {
                signs[l] / m as f64
            } else {
                -signs[l] / (q - m) as f64
            };
        }
        let var = w.dot(&(sigma_isp * &w));
        let b = (var > 1e-14 * scale && scale > 0.0).then(|| nf * delta * delta / var);
        result.break_stats.push((m, b));

        let p_value = if m == 1 {
            1.0
        } else {
            let mut cmat = DMatrix::zeros(m - 1, q);
            let mut d = DVector::zeros(m - 1);
            for k in 0..m - 1 {
                cmat[(k, order[k])] = signs[k];
                cmat[(k, order[k + 1])] = -signs[k + 1];
                d[k] = mags[k] - mags[k + 1];
            }
            let middle = symmetrize(&cmat * sigma_isp * cmat.transpose());
            let (stat, rank) = pinv_quadratic(&middle, &d);
            if rank == 0 {
                1.0
            } else {
                chi2_sf(nf * stat, rank as f64)
            }
        };
        result.screen_p_values.push((m, p_value));
        if p_value >= opts.screen_level && b.is_some() {
            result.admissible.push(m);
        }
    }
    let pool: Vec<(usize, f64)> = if result.admissible.is_empty() {
        result
            .break_stats
            .iter()
            .filter_map(|&(m, b)| b.map(|b| (m, b)))
            .collect()
    } else {
        result
            .break_stats
            .iter()
            .filter(|(m, _)| result.admissible.contains(m))
            .filter_map(|&(m, b)| b.map(|b| (m, b)))
            .collect()
    };
    // argmax with ties to the smallest m: candidates are in increasing m
    let mut best: Option<(usize, f64)> = None;
    for (m, b) in pool {
        if best.is_none_or(|(_, bb)| b > bb) {
            best = Some((m, b));
        }
    }
    match best {
        Some((m, _)) => result.cutoff = Some(m),
        None => result.diagnostic = Some("every contrast has zero variance; no cutoff".into()),
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IspReport {
    pub labels: Vec<String>,
    pub isp: DVector<f64>,
    pub sigma_isp: DMatrix<f64>,
    /// Covariance used for the plateau statistics.
    pub sigma_plateau: DMatrix<f64>,
    pub order: Vec<usize>,
    pub cutoff: Option<usize>,
    pub plateau_members: Vec<usize>,
    pub break_stats: Vec<(usize, Option<f64>)>,
    pub screen_p_values: Vec<(usize, f64)>,
    pub admissible: Vec<usize>,
    pub sign_unstable: Vec<usize>,
    pub warnings: Vec<String>,
    pub n: usize,
}

impl IspReport {
    /// Standard error of each ISP from the full covariance.
    pub fn standard_errors(&self) -> DVector<f64> {
        DVector::from_fn(self.isp.len(), |j, _| {
            (self.sigma_isp[(j, j)].max(0.0) / self.n as f64).sqrt()
        })
    }

    /// Members when the plateau boundary is a real-valued rank (for example
    /// the bootstrap mean plus one standard deviation).
    pub fn members_below(&self, boundary: f64) -> Vec<usize> {
        members_below(&self.order, boundary)
    }

    /// Sorted ISPs with their plateau flag, one row per restriction.
    pub fn write_sorted_csv<W: Write>(&self, out: W, boundary: Option<f64>) -> Result<()> {
        let se = self.standard_errors();
        let members = match boundary {
            Some(b) => self.members_below(b),
            None => self.plateau_members.clone(),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rank",
            "index",
            "restriction",
            "isp",
            "abs_isp",
            "se",
            "in_plateau",
        ])?;
        for (rank, &j) in self.order.iter().enumerate() {
            w.write_record([
                (rank + 1).to_string(),
                j.to_string(),
                self.labels[j].clone(),
                format!("{:e}", self.isp[j]),
                format!("{:e}", self.isp[j].abs()),
                format!("{:e}", se[j]),
                (members.contains(&j) as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn members_below(order: &[usize], boundary: f64) -> Vec<usize> {
    order
        .iter()
        .enumerate()
        .filter(|(rank, _)| (*rank + 1) as f64 <= boundary)
        .map(|(_, &j)| j)
        .collect()
}

/// ISPs, their covariance and the plateau split at one solution.
pub fn isp_report(
    sol: &KktSolution,
    blocks: &AsymptoticBlocks,
    system: &RestrictionSystem,
    opts: &PlateauOptions,
) -> Result<IspReport> {
    let isp = compute_isp(sol, system)?;
    let g = system.eval_g(&sol.theta)?;
    let sigma_isp = isp_covariance(blocks, sol, system)?;
    let mut sigma_plateau = match opts.covariance {
        PlateauCovariance::Full => sigma_isp.clone(),
        PlateauCovariance::GivenLambda => isp_covariance_given_lambda(blocks, sol, system)?,
    };
    let unstable = if sol.active {
        sign_unstable(&g)
    } else {
        Vec::new()
    };
    let mut warnings = Vec::new();
    for &j in &unstable {
        warnings.push(format!(
            "restriction {} ({}) is numerically zero at the estimate; its sign is unstable and it is excluded from the plateau covariance",
            j,
            system.labels()[j]
        ));
        sigma_plateau.row_mut(j).fill(0.0);
        sigma_plateau.column_mut(j).fill(0.0);
    }
    let n = blocks.scale_n;
    let order = ascending_order(&isp);
    let pr = plateau_cutoff(&isp, &sigma_plateau, n, opts);
    if let Some(d) = &pr.diagnostic {
        warnings.push(d.clone());
    }
    let plateau_members = pr.cutoff.map(|m| order[..m].to_vec()).unwrap_or_default();
    Ok(IspReport {
        labels: system.labels().to_vec(),
        isp,
        sigma_isp,
        sigma_plateau,
        order,
        cutoff: pr.cutoff,
        plateau_members,
        break_stats: pr.break_stats,
        screen_p_values: pr.screen_p_values,
        admissible: pr.admissible,
        sign_unstable: unstable,
        warnings,
        n,
    })
}
