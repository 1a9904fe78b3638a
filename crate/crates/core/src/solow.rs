//! Cross-country growth regressions with soft Solow-model restrictions.
//!
//! Model: `ln y = c + theta_s ln s + theta_n ln(n + g + delta) + e`, with
//! the steady-state restriction `theta_s + theta_n = 0` and polynomial
//! relaxations `theta_s - (-theta_n)^tau = 0`.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapConfig, BootstrapSummary};
use crate::error::{Error, Result};
use crate::inference::{sandwich, standard_errors, wald_test, WaldReference, WaldResult};
use crate::model::{fit_unconstrained, Dataset, LeastSquares, LossScale};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use crate::restriction::{RestrictionSystem, SigmaSpec};
use crate::rng::{stream, Purpose};
use crate::tolerance::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolowColumns {
    pub country: String,
    pub output: String,
    pub saving: String,
    pub population_growth: String,
}

impl Default for SolowColumns {
    fn default() -> Self {
        SolowColumns {
            country: "country".into(),
            output: "y".into(),
            saving: "s".into(),
            population_growth: "n".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolowConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub columns: SolowColumns,
    #[serde(default = "default_gd")]
    pub g_plus_delta: f64,
    #[serde(default = "default_taus")]
    pub tau: Vec<u32>,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Smallest grid point as a fraction of `c0`.
    #[serde(default = "default_lower_ratio")]
    pub lower_ratio: f64,
    #[serde(default)]
    pub loss_scale: LossScale,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Zero disables the bootstrap.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_gd() -> f64 {
    0.05
}
fn default_taus() -> Vec<u32> {
    vec![2, 3]
}
fn default_c0() -> f64 {
    500.0
}
fn default_grid() -> usize {
    GridSpec::default().size
}
fn default_lower_ratio() -> f64 {
    GridSpec::default().lower_ratio
}
fn default_level() -> f64 {
    0.95
}

impl SolowConfig {
    pub fn new(data: PathBuf) -> Self {
        SolowConfig {
            data,
            columns: SolowColumns::default(),
            g_plus_delta: default_gd(),
            tau: default_taus(),
            c0: default_c0(),
            grid_size: default_grid(),
            lower_ratio: default_lower_ratio(),
            loss_scale: LossScale::default(),
            level: default_level(),
            bootstrap: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_plus_delta > 0.0) {
            return Err(Error::Config(format!(
                "g_plus_delta must be positive, got {}",
                self.g_plus_delta
            )));
        }
        if self.tau.iter().any(|&t| t < 2) {
            return Err(Error::Config("relaxation orders must be at least 2".into()));
        }
        self.pipeline_config().validate()
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            grid: GridSpec {
                c0: self.c0,
                size: self.grid_size,
                lower_ratio: self.lower_ratio,
                ..Default::default()
            },
            level: self.level,
            ..Default::default()
        }
    }

    pub fn restriction_texts(&self) -> Vec<String> {
        let mut v = vec!["theta[1]+theta[2]=0".to_string()];
        v.extend(
            self.tau
                .iter()
                .map(|t| format!("theta[1]-(-theta[2])^{t}=0")),
        );
        v
    }
}

/// One ingested observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolowRow {
    pub country: String,
    pub y: f64,
    pub s: f64,
    pub n: f64,
}

pub fn read_solow_csv(path: &Path, cols: &SolowColumns) -> Result<Vec<SolowRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let (ci, yi, si, ni) = (
        headers.iter().position(|h| *h == cols.country),
        find(&cols.output)?,
        find(&cols.saving)?,
        find(&cols.population_growth)?,
    );
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            let f = rec.get(j).unwrap_or("").trim();
            f.parse().map_err(|_| {
                Error::Data(format!(
                    "row {}: column '{}' is not numeric: '{f}'",
                    r + 1,
                    headers[j]
                ))
            })
        };
        rows.push(SolowRow {
            country: ci.and_then(|j| rec.get(j)).unwrap_or("").to_string(),
            y: num(yi)?,
            s: num(si)?,
            n: num(ni)?,
        });
    }
    Ok(rows)
}

pub fn solow_dataset(rows: &[SolowRow], g_plus_delta: f64) -> Result<Dataset> {
    let k = rows.len();
    let mut x = DMatrix::from_element(k, 3, 1.0);
    let mut y = DVector::zeros(k);
    for (i, r) in rows.iter().enumerate() {
        if !(r.y > 0.0) || !(r.s > 0.0) || !(r.n + g_plus_delta > 0.0) {
            return Err(Error::Data(format!(
                "row {}: logarithm of a non-positive value (y = {}, s = {}, n + g + delta = {})",
                i + 1,
                r.y,
                r.s,
                r.n + g_plus_delta
            )));
        }
        y[i] = r.y.ln();
        x[(i, 1)] = r.s.ln();
        x[(i, 2)] = (r.n + g_plus_delta).ln();
    }
    let names = vec![
        "(intercept)".to_string(),
        "ln(s)".to_string(),
        format!("ln(n+{g_plus_delta})"),
    ];
    Dataset::new(y, x, names, true)
}

pub fn build_solow_model(cfg: &SolowConfig) -> Result<(Dataset, RestrictionSystem)> {
    cfg.validate()?;
    let rows = read_solow_csv(&cfg.data, &cfg.columns)?;
    let data = solow_dataset(&rows, cfg.g_plus_delta)?;
    let system = RestrictionSystem::parse(&cfg.restriction_texts(), 3, &SigmaSpec::Identity)?;
    Ok((data, system))
}

/// Equality-constrained least squares `R theta = r` through the KKT system
/// `[X'X R'; R 0] [theta; mu] = [X'y; r]`.
pub fn restricted_ols(
    data: &Dataset,
    r_mat: &DMatrix<f64>,
    r_vec: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = data.p();
    let k = r_mat.nrows();
    if r_mat.ncols() != p || r_vec.len() != k {
        return Err(Error::Dimension(format!(
            "restriction is {}x{} with {} right-hand sides for {p} parameters",
            k,
            r_mat.ncols(),
            r_vec.len()
        )));
    }
    let mut kkt = DMatrix::zeros(p + k, p + k);
    kkt.view_mut((0, 0), (p, p)).copy_from(&data.design().gram);
    kkt.view_mut((p, 0), (k, p)).copy_from(r_mat);
    kkt.view_mut((0, p), (p, k)).copy_from(&r_mat.transpose());
    let mut rhs = DVector::zeros(p + k);
    rhs.rows_mut(0, p).copy_from(data.xty());
    rhs.rows_mut(p, k).copy_from(r_vec);
    let sol = kkt
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("restricted least-squares system".into()))?;
    Ok(sol.rows(0, p).into_owned())
}

/// Restricted OLS for the affine rows of a restriction system.
pub fn restricted_ols_system(data: &Dataset, system: &RestrictionSystem) -> Result<DVector<f64>> {
    let af = system
        .affine()
        .ok_or_else(|| Error::Config("restricted OLS needs linear restrictions".into()))?;
    restricted_ols(data, &af.r_mat, &af.r_vec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitColumn {
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolowIspRow {
    pub restriction: String,
    pub g_value: f64,
    pub isp: f64,
    pub se: f64,
    pub rank: usize,
    pub in_plateau: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolowReport {
    pub observations: usize,
    pub columns: Vec<String>,
    pub restrictions: Vec<String>,
    pub unrestricted: FitColumn,
    pub restricted: FitColumn,
    /// Debiased soft-restricted estimate.
    pub soft: FitColumn,
    pub soft_constrained_theta: Vec<f64>,
    pub c_hat: f64,
    pub lambda: f64,
    pub active: bool,
    pub bias_proxy: f64,
    pub var_proxy: f64,
    pub risk: f64,
    pub wald_chi_square: WaldResult,
    pub wald_f: WaldResult,
    pub isp: Vec<SolowIspRow>,
    pub plateau_cutoff: Option<usize>,
    pub plateau_boundary: Option<f64>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub pipeline: Option<PipelineOutput>,
    #[serde(skip)]
    pub bootstrap: Option<BootstrapSummary>,
}

pub fn run_solow_on(
    data: &Dataset,
    system: &RestrictionSystem,
    cfg: &SolowConfig,
) -> Result<SolowReport> {
    let loss = LeastSquares::new(cfg.loss_scale);
    let pipe = cfg.pipeline_config();
    let tt = fit_unconstrained(data);
    let se_u = standard_errors(&sandwich(&tt, data, &loss)?, data.n())?;
    let linear = RestrictionSystem::parse(&cfg.restriction_texts()[..1], 3, &SigmaSpec::Identity)?;
    let theta_r = restricted_ols_system(data, &linear)?;
    let out = run_pipeline(data, &loss, system, &pipe)?;
    let wald_chi_square = wald_test(&linear, &tt, data, &loss, WaldReference::ChiSquare)?;
    let denom = (data.n() - data.p()) as f64;
    let wald_f = WaldResult::with_reference(
        wald_chi_square.statistic,
        1,
        WaldReference::F { denom_df: denom },
    );

    let mut boundary = out.isp.cutoff.map(|m| m as f64);
    let mut bootstrap = None;
    if cfg.bootstrap > 0 {
        let bcfg = BootstrapConfig {
            replications: cfg.bootstrap,
            seed: cfg.seed,
            level: cfg.level,
            ..Default::default()
        };
        let bs = run_bootstrap(data, &loss, system, &out, &bcfg, &pipe)?;
        if let Some(cd) = &bs.cutoff {
            boundary = Some(cd.boundary);
        }
        bootstrap = Some(bs);
    }
    let members = boundary
        .map(|b| out.isp.members_below(b))
        .unwrap_or_default();
    let g = system.eval_g(&out.solution.theta)?;
    let se_isp = out.isp.standard_errors();
    let isp = (0..system.q())
        .map(|j| SolowIspRow {
            restriction: system.labels()[j].clone(),
            g_value: g[j],
            isp: out.isp.isp[j],
            se: se_isp[j],
            rank: out.isp.order.iter().position(|&k| k == j).unwrap() + 1,
            in_plateau: members.contains(&j),
        })
        .collect();
    let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    Ok(SolowReport {
        observations: data.n(),
        columns: data.column_names().to_vec(),
        restrictions: system.labels().to_vec(),
        unrestricted: FitColumn {
            theta: vec(&tt),
            se: Some(vec(&se_u)),
            r_squared: data.r_squared(&tt),
        },
        restricted: FitColumn {
            theta: vec(&theta_r),
            se: None,
            r_squared: data.r_squared(&theta_r),
        },
        soft: FitColumn {
            theta: vec(&out.debiased.theta_db),
            se: Some(vec(&out.debiased.se)),
            r_squared: data.r_squared(&out.debiased.theta_db),
        },
        soft_constrained_theta: vec(&out.solution.theta),
        c_hat: out.c_hat(),
        lambda: out.solution.lambda,
        active: out.solution.active,
        bias_proxy: out.bias,
        var_proxy: out.var,
        risk: out.risk(),
        wald_chi_square,
        wald_f,
        isp,
        plateau_cutoff: out.isp.cutoff,
        plateau_boundary: boundary,
        warnings: out.isp.warnings.clone(),
        pipeline: Some(out),
        bootstrap,
    })
}

pub fn run_solow(cfg: &SolowConfig) -> Result<SolowReport> {
    let (data, system) = build_solow_model(cfg)?;
    run_solow_on(&data, &system, cfg)
}

impl SolowReport {
    /// Side-by-side coefficient table.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "term",
            "unrestricted",
            "unrestricted_se",
            "restricted",
            "soft_debiased",
            "soft_se",
        ])?;
        let se_u = self.unrestricted.se.as_ref().unwrap();
        let se_s = self.soft.se.as_ref().unwrap();
        for j in 0..self.columns.len() {
            w.write_record([
                self.columns[j].clone(),
                format!("{:.10e}", self.unrestricted.theta[j]),
                format!("{:.10e}", se_u[j]),
                format!("{:.10e}", self.restricted.theta[j]),
                format!("{:.10e}", self.soft.theta[j]),
                format!("{:.10e}", se_s[j]),
            ])?;
        }
        w.write_record([
            "r_squared".to_string(),
            format!("{:.10e}", self.unrestricted.r_squared),
            String::new(),
            format!("{:.10e}", self.restricted.r_squared),
            format!("{:.10e}", self.soft.r_squared),
            String::new(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Synthetic cross-section from the restricted structural equation
/// `ln y = c + beta (ln s - ln(n + g + delta)) + e`.
pub fn synthetic_rows(
    count: usize,
    beta: f64,
    intercept: f64,
    noise_sd: f64,
    seed: u64,
) -> Vec<SolowRow> {
    let mut rng = stream(seed, Purpose::Synthetic, 0);
    (0..count)
        .map(|i| {
            let s: f64 = rng.random_range(0.04..0.40);
            let n: f64 = rng.random_range(-0.005..0.040);
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
            let ln_y = intercept + beta * (s.ln() - (n + 0.05).ln()) + e;
            SolowRow {
                country: format!("C{:03}", i + 1),
                y: ln_y.exp(),
                s,
                n,
            }
        })
        .collect()
}

pub fn write_solow_csv<W: Write>(rows: &[SolowRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "y", "s", "n"])?;
    for r in rows {
        w.write_record([
            r.country.clone(),
            format!("{:.17e}", r.y),
            format!("{:.17e}", r.s),
            format!("{:.17e}", r.n),
        ])?;
    }
    w.flush()?;
    Ok(())
}
