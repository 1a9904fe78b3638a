//! Simulation studies: AR(1) Gaussian designs with noise calibrated to a
//! target signal-to-noise ratio, the full estimator per iteration, and
//! aggregate tables.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapConfig, MultiplierLaw};
use crate::distributions::normal_critical;
use crate::error::{Error, Result};
use crate::inference::DebiasVariance;
use crate::isp::{members_below, PlateauOptions};
use crate::model::{fit_unconstrained, Dataset, LeastSquares, LossScale};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::restriction::{RestrictionSystem, SigmaSpec};
use crate::rng::{child_seed, stream, Purpose};
use crate::tolerance::GridSpec;

/// Share of failed iterations above which a study aborts.
pub const MAX_STUDY_FAILURE_SHARE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub case_id: u32,
    pub n: usize,
    /// Number of slope regressors; the design adds an intercept column.
    pub slopes: usize,
    pub rho: f64,
    #[serde(default = "one")]
    pub target_snr: f64,
    /// Intercept first.
    pub theta0: Vec<f64>,
    pub restrictions: Vec<String>,
    #[serde(default)]
    pub sigma: SigmaSpec,
    pub c0: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss_scale: LossScale,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Bootstrap replications per iteration; zero disables the bootstrap.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default)]
    pub multiplier_law: MultiplierLaw,
    #[serde(default)]
    pub plateau: PlateauOptions,
    #[serde(default)]
    pub debias_variance: DebiasVariance,
}

fn one() -> f64 {
    1.0
}

fn default_grid_size() -> usize {
    GridSpec::default().size
}

fn default_level() -> f64 {
    0.95
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// One of the three shipped scenarios, at full scale.
    pub fn case(id: u32) -> Result<Self> {
        let text = match id {
            1 => include_str!("../scenarios/case1.toml"),
            2 => include_str!("../scenarios/case2.toml"),
            3 => include_str!("../scenarios/case3.toml"),
            _ => return Err(Error::Config(format!("no shipped scenario for case {id}"))),
        };
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.target_snr > 0.0) {
            return Err(Error::Config(format!(
                "target_snr must be positive, got {}",
                self.target_snr
            )));
        }
        if self.theta0.len() != self.slopes + 1 {
            return Err(Error::Config(format!(
                "theta0 has {} entries, expected slopes + 1 = {}",
                self.theta0.len(),
                self.slopes + 1
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.n <= self.slopes + 1 {
            return Err(Error::Config(format!(
                "n = {} is too small for {} slopes",
                self.n, self.slopes
            )));
        }
        if self.restrictions.is_empty() {
            return Err(Error::Config("at least one restriction is required".into()));
        }
        self.system()?;
        self.pipeline_config().validate()
    }

    pub fn p(&self) -> usize {
        self.slopes + 1
    }

    pub fn system(&self) -> Result<RestrictionSystem> {
        RestrictionSystem::parse(&self.restrictions, self.p(), &self.sigma)
    }

    pub fn theta0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta0)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            grid: GridSpec {
                c0: self.c0,
                size: self.grid_size,
                ..Default::default()
            },
            plateau: self.plateau,
            level: self.level,
            debias_variance: self.debias_variance,
            ..Default::default()
        }
    }

    pub fn loss(&self) -> LeastSquares {
        LeastSquares::new(self.loss_scale)
    }
}

/// Lower Cholesky factor of the AR(1) correlation matrix `rho^|j-l|`.
pub fn ar1_cholesky(p: usize, rho: f64) -> DMatrix<f64> {
    // closed form: row j is (rho^j, rho^(j-1) s, ..., s) with s = sqrt(1 - rho^2)
    let s = (1.0 - rho * rho).sqrt();
    DMatrix::from_fn(p, p, |j, l| {
        if l > j {
            0.0
        } else if l == 0 {
            rho.powi(j as i32)
        } else {
            s * rho.powi((j - l) as i32)
        }
    })
}

/// Dataset for one iteration. Draws `Z` row by row, then the noise.
pub fn generate_data(spec: &ScenarioSpec, iteration: u64) -> Result<Dataset> {
    let mut rng = stream(spec.seed, Purpose::Dataset, iteration);
    let (n, k) = (spec.n, spec.slopes);
    let mut z = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let l = ar1_cholesky(k, spec.rho);
    let x_raw = z * l.transpose();
    let theta0 = spec.theta0();
    let signal = &x_raw * theta0.rows(1, k);
    let mean = signal.mean();
    let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sigma = (var / spec.target_snr).sqrt();
    let mut x = DMatrix::from_element(n, k + 1, 1.0);
    x.columns_mut(1, k).copy_from(&x_raw);
    let mut y = &x * &theta0;
    for i in 0..n {
        y[i] += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend((1..=k).map(|j| format!("x{j}")));
    Dataset::new(y, x, names, true)
}

/// Per-iteration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub c_hat: f64,
    pub lambda: f64,
    pub bias: f64,
    pub var: f64,
    pub theta: Vec<f64>,
    pub theta_db: Vec<f64>,
    pub isp: Vec<f64>,
    pub cutoff: Option<usize>,
    /// Plateau boundary used for membership: bootstrap mean + sd when the
    /// bootstrap ran and produced a cutoff distribution, otherwise the cutoff.
    pub boundary: Option<f64>,
    pub members: Vec<bool>,
    pub covered_analytic: Vec<bool>,
    /// Coverage of the interval built from `V1` alone.
    pub covered_v1: Vec<bool>,
    pub covered_bootstrap: Option<Vec<bool>>,
    pub r_squared: f64,
}

pub fn run_iteration(
    spec: &ScenarioSpec,
    system: &RestrictionSystem,
    iteration: usize,
) -> Result<IterationRecord> {
    let data = generate_data(spec, iteration as u64)?;
    let loss = spec.loss();
    let pipe = spec.pipeline_config();
    let out = run_pipeline(&data, &loss, system, &pipe)?;
    let theta0 = spec.theta0();
    let p = spec.p();
    let db = &out.debiased;
    let covered_analytic = (0..p)
        .map(|j| db.ci_lower[j] <= theta0[j] && theta0[j] <= db.ci_upper[j])
        .collect();
    let z = normal_critical(spec.level);
    let covered_v1 = (0..p)
        .map(|j| (db.theta_db[j] - theta0[j]).abs() <= z * db.se_v1[j])
        .collect();
    let mut boundary = out.isp.cutoff.map(|m| m as f64);
    let mut covered_bootstrap = None;
    if spec.bootstrap > 0 {
        let cfg = BootstrapConfig {
            replications: spec.bootstrap,
            law: spec.multiplier_law,
            seed: child_seed(spec.seed, Purpose::StudyBootstrap, iteration as u64),
            level: spec.level,
        };
        let bs = run_bootstrap(&data, &loss, system, &out, &cfg, &pipe)?;
        covered_bootstrap = Some(
            (0..p)
                .map(|j| bs.ci_lower[j] <= theta0[j] && theta0[j] <= bs.ci_upper[j])
                .collect(),
        );
        if let Some(cd) = &bs.cutoff {
            boundary = Some(cd.boundary);
        }
    }
    let q = system.q();
    let mut members = vec![false; q];
    if let Some(b) = boundary {
        for j in members_below(&out.isp.order, b) {
            members[j] = true;
        }
    }
    Ok(IterationRecord {
        iteration,
        c_hat: out.c_hat(),
        lambda: out.solution.lambda,
        bias: out.bias,
        var: out.var,
        theta: out.solution.theta.iter().copied().collect(),
        theta_db: db.theta_db.iter().copied().collect(),
        isp: out.isp.isp.iter().copied().collect(),
        cutoff: out.isp.cutoff,
        boundary,
        members,
        covered_analytic,
        covered_v1,
        covered_bootstrap,
        r_squared: data.r_squared(&fit_unconstrained(&data)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        if values.is_empty() {
            return Moments {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Moments { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub constrained: Moments,
    pub debiased: Moments,
    /// `|mean - truth|` of the debiased estimate.
    pub abs_bias: f64,
    pub abs_bias_constrained: f64,
    pub coverage_analytic: f64,
    pub coverage_v1: f64,
    pub coverage_bootstrap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSummary {
    pub label: String,
    /// `g_j(theta0)`.
    pub truth_value: f64,
    pub isp: Moments,
    pub plateau_frequency: f64,
    /// Frequency above one half.
    pub in_plateau: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub case_id: u32,
    pub iterations: usize,
    pub completed: usize,
    pub failures: Vec<(usize, String)>,
    pub parameters: Vec<ParameterSummary>,
    pub restrictions: Vec<RestrictionSummary>,
    pub lambda: Moments,
    pub c_hat: Moments,
    pub bias: Moments,
    pub var: Moments,
    pub risk: Moments,
    pub r_squared: Moments,
    pub boundary: Option<Moments>,
    pub records: Vec<IterationRecord>,
}

pub fn run_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    spec.validate()?;
    let system = spec.system()?;
    let results: Vec<Result<IterationRecord>> = (0..spec.iterations)
        .into_par_iter()
        .map(|i| run_iteration(spec, &system, i))
        .collect();
    aggregate(spec, &system, results)
}

fn aggregate(
    spec: &ScenarioSpec,
    system: &RestrictionSystem,
    results: Vec<Result<IterationRecord>>,
) -> Result<StudyResult> {
    let total = results.len();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_STUDY_FAILURE_SHARE * total as f64 || records.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    let k = records.len() as f64;
    let theta0 = spec.theta0();
    let col = |f: &dyn Fn(&IterationRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let parameters = (0..spec.p())
        .map(|j| {
            let constrained = Moments::of(&col(&|r| r.theta[j]));
            let debiased = Moments::of(&col(&|r| r.theta_db[j]));
            let coverage_analytic =
                records.iter().filter(|r| r.covered_analytic[j]).count() as f64 / k;
            let coverage_v1 = records.iter().filter(|r| r.covered_v1[j]).count() as f64 / k;
            let boot: Vec<bool> = records
                .iter()
                .filter_map(|r| r.covered_bootstrap.as_ref().map(|c| c[j]))
                .collect();
            let coverage_bootstrap = (!boot.is_empty())
                .then(|| boot.iter().filter(|&&c| c).count() as f64 / boot.len() as f64);
            ParameterSummary {
                name: format!("theta[{j}]"),
                truth: theta0[j],
                abs_bias: (debiased.mean - theta0[j]).abs(),
                abs_bias_constrained: (constrained.mean - theta0[j]).abs(),
                constrained,
                debiased,
                coverage_analytic,
                coverage_v1,
                coverage_bootstrap,
            }
        })
        .collect();
    let g0 = system.eval_g(&theta0)?;
    let restrictions = (0..system.q())
        .map(|j| {
            let freq = records.iter().filter(|r| r.members[j]).count() as f64 / k;
            RestrictionSummary {
                label: system.labels()[j].clone(),
                truth_value: g0[j],
                isp: Moments::of(&col(&|r| r.isp[j])),
                plateau_frequency: freq,
                in_plateau: freq > 0.5,
            }
        })
        .collect();
    let boundaries: Vec<f64> = records.iter().filter_map(|r| r.boundary).collect();
    Ok(StudyResult {
        case_id: spec.case_id,
        iterations: total,
        completed: records.len(),
        failures,
        parameters,
        restrictions,
        lambda: Moments::of(&col(&|r| r.lambda)),
        c_hat: Moments::of(&col(&|r| r.c_hat)),
        bias: Moments::of(&col(&|r| r.bias)),
        var: Moments::of(&col(&|r| r.var)),
        risk: Moments::of(&col(&|r| r.bias + r.var)),
        r_squared: Moments::of(&col(&|r| r.r_squared)),
        boundary: (!boundaries.is_empty()).then(|| Moments::of(&boundaries)),
        records,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10e}")
    } else {
        String::new()
    }
}

impl StudyResult {
    /// Estimates, ISPs and scalar summaries in long form.
    pub fn write_table1<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "quantity",
            "label",
            "truth",
            "mean",
            "sd",
            "abs_bias",
            "plateau_frequency",
            "in_plateau",
        ])?;
        for p in &self.parameters {
            w.write_record([
                "debiased_estimate",
                &p.name,
                &num(p.truth),
                &num(p.debiased.mean),
                &num(p.debiased.sd),
                &num(p.abs_bias),
                "",
                "",
            ])?;
        }
        for p in &self.parameters {
            w.write_record([
                "constrained_estimate",
                &p.name,
                &num(p.truth),
                &num(p.constrained.mean),
                &num(p.constrained.sd),
                &num(p.abs_bias_constrained),
                "",
                "",
            ])?;
        }
        for r in &self.restrictions {
            w.write_record([
                "isp",
                &r.label,
                &num(r.truth_value),
                &num(r.isp.mean),
                &num(r.isp.sd),
                "",
                &num(r.plateau_frequency),
                if r.in_plateau { "1" } else { "0" },
            ])?;
        }
        let scalars = [
            ("lambda", self.lambda),
            ("c_hat", self.c_hat),
            ("bias_proxy", self.bias),
            ("var_proxy", self.var),
            ("risk", self.risk),
            ("r_squared", self.r_squared),
        ];
        for (name, m) in scalars {
            w.write_record([name, "", "", &num(m.mean), &num(m.sd), "", "", ""])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Coverage per parameter plus the mean over slopes.
    pub fn write_table2<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "parameter",
            "truth",
            "analytic_coverage",
            "v1_coverage",
            "bootstrap_coverage",
        ])?;
        for p in &self.parameters {
            w.write_record([
                p.name.clone(),
                num(p.truth),
                num(p.coverage_analytic),
                num(p.coverage_v1),
                p.coverage_bootstrap.map(num).unwrap_or_default(),
            ])?;
        }
        let slopes = &self.parameters[1..];
        let mean = |f: &dyn Fn(&ParameterSummary) -> f64| {
            slopes.iter().map(f).sum::<f64>() / slopes.len() as f64
        };
        let boots: Vec<f64> = slopes.iter().filter_map(|p| p.coverage_bootstrap).collect();
        let mean_b = (!boots.is_empty()).then(|| boots.iter().sum::<f64>() / boots.len() as f64);
        w.write_record([
            "mean_slopes".to_string(),
            String::new(),
            num(mean(&|p| p.coverage_analytic)),
            num(mean(&|p| p.coverage_v1)),
            mean_b.map(num).unwrap_or_default(),
        ])?;
        w.flush()?;
        Ok(())
    }

    /// Mean ISPs sorted ascending with plateau frequency and boundary lines.
    pub fn write_figure1<W: Write>(&self, out: W) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.restrictions.len()).collect();
        idx.sort_by(|&a, &b| {
            self.restrictions[a]
                .isp
                .mean
                .abs()
                .total_cmp(&self.restrictions[b].isp.mean.abs())
                .then(a.cmp(&b))
        });
        let (bm, bu) = match self.boundary {
            Some(m) => (num(m.mean), num(m.mean + m.sd)),
            None => (String::new(), String::new()),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rank",
            "index",
            "restriction",
            "mean_isp",
            "sd_isp",
            "plateau_frequency",
            "in_plateau",
            "boundary_mean",
            "boundary_mean_plus_sd",
        ])?;
        for (rank, &j) in idx.iter().enumerate() {
            let r = &self.restrictions[j];
            w.write_record([
                (rank + 1).to_string(),
                j.to_string(),
                r.label.clone(),
                num(r.isp.mean),
                num(r.isp.sd),
                num(r.plateau_frequency),
                (r.in_plateau as u8).to_string(),
                bm.clone(),
                bu.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Small AR(1) example dataset (`n = 200`, three slopes, the first two
/// restricted to zero in the example config) as CSV with columns `y, x1..x3`.
pub fn write_example_csv<W: Write>(seed: u64, out: W) -> Result<()> {
    let spec = ScenarioSpec {
        case_id: 0,
        n: 200,
        slopes: 3,
        rho: 0.5,
        target_snr: 1.0,
        theta0: vec![0.5, 0.4, 0.0, -0.3],
        restrictions: vec!["theta[1] = 0".into()],
        sigma: SigmaSpec::Identity,
        c0: 1.0,
        grid_size: default_grid_size(),
        iterations: 1,
        seed,
        loss_scale: LossScale::Half,
        level: 0.95,
        bootstrap: 0,
        multiplier_law: MultiplierLaw::Rademacher,
        plateau: PlateauOptions::default(),
        debias_variance: DebiasVariance::default(),
    };
    let data = generate_data(&spec, 0)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y", "x1", "x2", "x3"])?;
    for i in 0..data.n() {
        let mut rec = vec![format!("{:.17e}", data.y[i])];
        rec.extend((1..4).map(|j| format!("{:.17e}", data.x()[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_factor_reproduces_correlation() {
        let l = ar1_cholesky(6, 0.8);
        let s = &l * l.transpose();
        for j in 0..6 {
            for k in 0..6 {
                let want = 0.8f64.powi((j as i32 - k as i32).abs());
                assert!((s[(j, k)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shipped_scenarios_parse() {
        for id in 1..=3 {
            let spec = ScenarioSpec::case(id).unwrap();
            assert_eq!(spec.case_id, id);
            assert_eq!(spec.p(), 11);
            assert_eq!(spec.system().unwrap().q(), if id == 1 { 10 } else { 11 });
        }
    }

    #[test]
    fn truths_of_sum_restriction() {
        let s2 = ScenarioSpec::case(2).unwrap();
        let s3 = ScenarioSpec::case(3).unwrap();
        let g2 = s2.system().unwrap().eval_g(&s2.theta0()).unwrap();
        let g3 = s3.system().unwrap().eval_g(&s3.theta0()).unwrap();
        assert_eq!(g2[10], 0.0);
        assert!((g3[10] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn data_generation_is_reproducible() {
        let spec = ScenarioSpec {
            n: 50,
            ..ScenarioSpec::case(1).unwrap()
        };
        let a = generate_data(&spec, 3).unwrap();
        let b = generate_data(&spec, 3).unwrap();
        let c = generate_data(&spec, 4).unwrap();
        assert_eq!(a.y, b.y);
        assert_ne!(a.y, c.y);
        assert!(a.x().column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn validation() {
        let base = ScenarioSpec::case(1).unwrap();
        assert!(ScenarioSpec {
            iterations: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScenarioSpec {
            rho: 1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(ScenarioSpec {
            theta0: vec![0.0; 3],
            ..base.clone()
        }
        .validate()
        .is_err());
        let mut bad = base;
        bad.restrictions.push("theta[99] = 0".into());
        assert!(bad.validate().is_err());
    }
}
