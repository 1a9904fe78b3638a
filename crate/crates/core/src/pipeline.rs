//! The full estimator on one dataset: unconstrained fit, tolerance
//! selection, inner solution at the selected tolerance, variance blocks,
//! debiasing and the ISP/plateau report.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    compute_blocks, debias, AsymptoticBlocks, DebiasVariance, DebiasedEstimate,
};
use crate::isp::{isp_report, IspReport, PlateauOptions};
use crate::kkt::{KktSolution, KktSolver, SolverOptions};
use crate::model::{Dataset, Loss};
use crate::restriction::RestrictionSystem;
use crate::tolerance::{select_tolerance, GridSpec, RiskCurve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub plateau: PlateauOptions,
    pub solver: SolverOptions,
    pub level: f64,
    pub debias_variance: DebiasVariance,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridSpec::default(),
            plateau: PlateauOptions::default(),
            solver: SolverOptions::default(),
            level: 0.95,
            debias_variance: DebiasVariance::Influence,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must be in (0, 1), got {}",
                self.level
            )));
        }
        if !(self.plateau.screen_level > 0.0 && self.plateau.screen_level < 1.0) {
            return Err(Error::Config(format!(
                "screen level must be in (0, 1), got {}",
                self.plateau.screen_level
            )));
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::Config(
                "solver max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub theta_tilde: DVector<f64>,
    pub h_tilde: f64,
    pub curve: RiskCurve,
    pub solution: KktSolution,
    pub blocks: AsymptoticBlocks,
    pub debiased: DebiasedEstimate,
    pub isp: IspReport,
    pub bias: f64,
    pub var: f64,
}

impl PipelineOutput {
    pub fn c_hat(&self) -> f64 {
        self.solution.c
    }

    pub fn risk(&self) -> f64 {
        self.bias + self.var
    }
}

pub fn run_pipeline(
    data: &Dataset,
    loss: &dyn Loss,
    system: &RestrictionSystem,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let solver = KktSolver::new(data, loss, system, cfg.solver)?;
    let sel = select_tolerance(&solver, &cfg.grid)?;
    let i = sel.curve.c_hat_index;
    let (bias, var) = (sel.curve.bias[i], sel.curve.var[i]);
    let sol = sel.solution;
    let blocks = compute_blocks(&sol, data, loss, system)?;
    let debiased = debias(
        &sol,
        solver.theta_tilde(),
        data,
        loss,
        system,
        &blocks,
        cfg.debias_variance,
        cfg.level,
    )?;
    let isp = isp_report(&sol, &blocks, system, &cfg.plateau)?;
    Ok(PipelineOutput {
        theta_tilde: solver.theta_tilde().clone(),
        h_tilde: solver.h_tilde(),
        curve: sel.curve,
        solution: sol,
        blocks,
        debiased,
        isp,
        bias,
        var,
    })
}
