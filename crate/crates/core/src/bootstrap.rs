//! Wild bootstrap that re-runs the whole estimator on each pseudo-sample.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{KktSolution, KktSolver};
use crate::model::{Dataset, Loss};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use crate::restriction::RestrictionSystem;
use crate::rng::{stream, Purpose};

/// Share of failed replications above which the bootstrap aborts.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierLaw {
    #[default]
    Rademacher,
    /// Two-point law with third moment one.
    Mammen,
    Gaussian,
}

impl MultiplierLaw {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            MultiplierLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            MultiplierLaw::Mammen => {
                let s5 = 5f64.sqrt();
                let p = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p {
                    -(s5 - 1.0) / 2.0
                } else {
                    (s5 + 1.0) / 2.0
                }
            }
            MultiplierLaw::Gaussian => rng.sample(StandardNormal),
        }
    }

    pub fn draw_vec<R: Rng + ?Sized>(self, rng: &mut R, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.draw(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub law: MultiplierLaw,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 200,
            law: MultiplierLaw::Rademacher,
            seed: 1,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config(
                "bootstrap replications must be at least 1".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "bootstrap level must be in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// `y_b = X theta_hat + u_hat * w` with raw residuals `u_hat = y - X theta_hat`.
pub fn wild_resample(
    data: &Dataset,
    theta_hat: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> Result<Dataset> {
    if multipliers.len() != data.n() {
        return Err(Error::Dimension(format!(
            "{} multipliers for {} observations",
            multipliers.len(),
            data.n()
        )));
    }
    let fitted = data.x() * theta_hat;
    let resid = &data.y - &fitted;
    data.with_outcome(fitted + resid.component_mul(multipliers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffDistribution {
    pub mean: f64,
    pub sd: f64,
    pub boundary: f64,
    /// `(m, count)` for every observed cutoff.
    pub histogram: Vec<(usize, usize)>,
    pub count: usize,
}

/// Mean, sample standard deviation and `mean + sd` over the defined cutoffs.
/// `None` when fewer than two replications produced a cutoff.
pub fn cutoff_distribution(cutoffs: &[Option<usize>]) -> Option<CutoffDistribution> {
    let vals: Vec<f64> = cutoffs.iter().flatten().map(|&m| m as f64).collect();
    if vals.len() < 2 {
        return None;
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let mut histogram: Vec<(usize, usize)> = Vec::new();
    let mut sorted: Vec<usize> = cutoffs.iter().flatten().copied().collect();
    sorted.sort_unstable();
    for m in sorted {
        match histogram.last_mut() {
            Some((v, c)) if *v == m => *c += 1,
            _ => histogram.push((m, 1)),
        }
    }
    Some(CutoffDistribution {
        mean,
        sd,
        boundary: mean + sd,
        histogram,
        count: vals.len(),
    })
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replications: usize,
    pub law: MultiplierLaw,
    pub seed: u64,
    pub level: f64,
    /// Indices of successful replications, in order; rows below follow it.
    pub succeeded: Vec<usize>,
    pub failures: Vec<(usize, String)>,
    pub c_hats: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub thetas: DMatrix<f64>,
    pub thetas_debiased: DMatrix<f64>,
    pub isps: DMatrix<f64>,
    pub cutoffs: Vec<Option<usize>>,
    /// Percentile interval for the debiased estimate: quantiles of
    /// `theta_db + (theta_db_b - theta_hat)`.
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub cutoff: Option<CutoffDistribution>,
}

impl BootstrapSummary {
    pub fn write_cutoff_histogram<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cutoff", "count"])?;
        if let Some(cd) = &self.cutoff {
            for (m, c) in &cd.histogram {
                w.write_record([m.to_string(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Replicate {
    c_hat: f64,
    lambda: f64,
    theta: DVector<f64>,
    theta_db: DVector<f64>,
    isp: DVector<f64>,
    cutoff: Option<usize>,
}

fn replicate(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    theta_hat: &DVector<f64>,
    w: &DVector<f64>,
    pipe: &PipelineConfig,
) -> Result<Replicate> {
    let yb = wild_resample(data, theta_hat, w)?;
    let out = run_pipeline(&yb, loss, system, pipe)?;
    Ok(Replicate {
        c_hat: out.c_hat(),
        lambda: out.solution.lambda,
        theta: out.solution.theta,
        theta_db: out.debiased.theta_db,
        isp: out.isp.isp,
        cutoff: out.isp.cutoff,
    })
}

/// Run `cfg.replications` full-pipeline replications around `original`.
/// Replication `b` uses the stream `(cfg.seed, b)`; results do not depend on
/// the rayon pool size.
pub fn run_bootstrap(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    original: &PipelineOutput,
    cfg: &BootstrapConfig,
    pipe: &PipelineConfig,
) -> Result<BootstrapSummary> {
    cfg.validate()?;
    let theta_hat = &original.solution.theta;
    let results: Vec<Result<Replicate>> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, Purpose::Bootstrap, b as u64);
            let w = cfg.law.draw_vec(&mut rng, data.n());
            replicate(data, loss, system, theta_hat, &w, pipe)
        })
        .collect();
    summarize(results, original, cfg, system.q())
}

fn summarize(
    results: Vec<Result<Replicate>>,
    original: &PipelineOutput,
    cfg: &BootstrapConfig,
    q: usize,
) -> Result<BootstrapSummary> {
    let total = results.len();
    let p = original.solution.theta.len();
    let mut ok = Vec::new();
    let mut succeeded = Vec::new();
    let mut failures = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => {
                succeeded.push(b);
                ok.push(rep);
            }
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * total as f64 || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    let k = ok.len();
    let thetas = DMatrix::from_fn(k, p, |b, j| ok[b].theta[j]);
    let thetas_debiased = DMatrix::from_fn(k, p, |b, j| ok[b].theta_db[j]);
    let isps = DMatrix::from_fn(k, q, |b, j| ok[b].isp[j]);
    let alpha = 1.0 - cfg.level;
    let db = &original.debiased.theta_db;
    let mut ci_lower = DVector::zeros(p);
    let mut ci_upper = DVector::zeros(p);
    for j in 0..p {
        let mut col: Vec<f64> = (0..k)
            .map(|b| db[j] + thetas_debiased[(b, j)] - original.solution.theta[j])
            .collect();
        col.sort_by(f64::total_cmp);
        ci_lower[j] = quantile_sorted(&col, alpha / 2.0);
        ci_upper[j] = quantile_sorted(&col, 1.0 - alpha / 2.0);
    }
    let cutoffs: Vec<Option<usize>> = ok.iter().map(|r| r.cutoff).collect();
    Ok(BootstrapSummary {
        replications: total,
        law: cfg.law,
        seed: cfg.seed,
        level: cfg.level,
        succeeded,
        failures,
        c_hats: ok.iter().map(|r| r.c_hat).collect(),
        lambdas: ok.iter().map(|r| r.lambda).collect(),
        thetas,
        thetas_debiased,
        isps,
        cutoff: cutoff_distribution(&cutoffs),
        cutoffs,
        ci_lower,
        ci_upper,
    })
}

/// Bootstrap replicates of the inner solution at a fixed tolerance `c`
/// (no re-selection), rows indexed by replication.
pub fn fixed_c_replicates(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    solution: &KktSolution,
    cfg: &BootstrapConfig,
) -> Result<Vec<KktSolution>> {
    cfg.validate()?;
    (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, Purpose::Bootstrap, b as u64);
            let w = cfg.law.draw_vec(&mut rng, data.n());
            let yb = wild_resample(data, &solution.theta, &w)?;
            let solver = KktSolver::new(&yb, loss, system, Default::default())?;
            solver.solve(solution.c, Some(solution))
        })
        .collect()
}
