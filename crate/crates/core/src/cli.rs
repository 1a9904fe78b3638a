//! Command-line front end: configuration loading, command dispatch and
//! report files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bootstrap::{run_bootstrap, BootstrapConfig, BootstrapSummary, MultiplierLaw};
use crate::error::{Error, Result};
use crate::inference::DebiasVariance;
use crate::isp::PlateauOptions;
use crate::kkt::SolverOptions;
use crate::model::{Dataset, LeastSquares, LossScale};
use crate::montecarlo::{run_study, ScenarioSpec, StudyResult};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use crate::restriction::{RestrictionSystem, SigmaSpec};
use crate::solow::{run_solow, synthetic_rows, write_solow_csv, SolowConfig, SolowReport};
use crate::tolerance::GridSpec;

/// Version of the JSON report layout; bumped on any breaking change.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// The JSON schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Parser)]
#[command(
    name = "shadowprice",
    version,
    about = "Soft-restricted M-estimation with data-driven tolerance"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "SHADOWPRICE_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for bootstrap and simulation loops.
    #[arg(long, global = true, env = "SHADOWPRICE_WORKERS")]
    pub workers: Option<usize>,
    /// Bootstrap replications.
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    /// Confidence level.
    #[arg(long, global = true)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Estimate on a CSV dataset.
    Fit,
    /// Estimate, then run the full-pipeline wild bootstrap.
    Bootstrap,
    /// Run a simulation scenario.
    Simulate {
        /// Shipped scenario 1, 2 or 3 (instead of a config).
        #[arg(long)]
        case: Option<u32>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Growth regression with soft steady-state restrictions.
    Solow,
    /// Write the example datasets.
    ExampleData {
        #[arg(long, default_value_t = 98)]
        rows: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Fit,
    Bootstrap,
    Simulate,
    Solow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub outcome: String,
    /// Defaults to every column except the outcome.
    #[serde(default)]
    pub regressors: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub intercept: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replications: usize,
    pub law: MultiplierLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub case: Option<u32>,
    pub scenario: Option<PathBuf>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub seed: u64,
    pub level: f64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub data: Option<DataConfig>,
    pub restrictions: Vec<String>,
    pub sigma: SigmaSpec,
    pub loss_scale: LossScale,
    pub grid: GridSpec,
    pub plateau: PlateauOptions,
    pub solver: SolverOptions,
    pub debias_variance: DebiasVariance,
    pub bootstrap: BootstrapSection,
    pub simulate: Option<SimulateSection>,
    pub solow: Option<SolowConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            seed: 1,
            level: 0.95,
            out: None,
            workers: None,
            data: None,
            restrictions: Vec::new(),
            sigma: SigmaSpec::Identity,
            loss_scale: LossScale::Half,
            grid: GridSpec::default(),
            plateau: PlateauOptions::default(),
            solver: SolverOptions::default(),
            debias_variance: DebiasVariance::default(),
            bootstrap: BootstrapSection::default(),
            simulate: None,
            solow: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.data.as_mut() {
            resolve(&mut d.path);
        }
        if let Some(s) = cfg.simulate.as_mut().and_then(|s| s.scenario.as_mut()) {
            resolve(s);
        }
        if let Some(s) = cfg.solow.as_mut() {
            resolve(&mut s.data);
        }
        if let Some(o) = cfg.out.as_mut() {
            resolve(o);
        }
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            grid: self.grid,
            plateau: self.plateau,
            solver: self.solver,
            level: self.level,
            debias_variance: self.debias_variance,
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replications: self.bootstrap.replications,
            law: self.bootstrap.law,
            seed: self.seed,
            level: self.level,
        }
    }

    /// Checks that need no computation: ranges and file existence.
    pub fn validate(&self, command: CommandKind) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must be in (0, 1), got {}",
                self.level
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match command {
            CommandKind::Fit | CommandKind::Bootstrap => {
                let data = self
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [data] section".into()))?;
                require_file(&data.path)?;
                if self.restrictions.is_empty() {
                    return Err(Error::Config("at least one restriction is required".into()));
                }
                self.pipeline_config().validate()?;
                if command == CommandKind::Bootstrap {
                    self.bootstrap_config().validate()?;
                }
            }
            CommandKind::Simulate => {
                let sim = self.simulate.clone().unwrap_or_default();
                if sim.case.is_none() && sim.scenario.is_none() {
                    return Err(Error::Config(
                        "simulate needs a case number or a scenario file".into(),
                    ));
                }
                if let Some(p) = &sim.scenario {
                    require_file(p)?;
                }
                if sim.iterations == Some(0) {
                    return Err(Error::Config("iterations must be at least 1".into()));
                }
            }
            CommandKind::Solow => {
                let s = self
                    .solow
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [solow] section".into()))?;
                require_file(&s.data)?;
                s.validate()?;
            }
        }
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("file not found: {}", path.display())))
    }
}

/// Settings recorded in every report so a run can be reproduced from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ledger {
    pub seed: u64,
    pub level: f64,
    pub loss_scale: LossScale,
    pub sigma: SigmaSpec,
    pub restrictions: Vec<String>,
    pub grid: GridSpec,
    pub solver: SolverOptions,
    pub plateau: PlateauOptions,
    pub debias_variance: DebiasVariance,
    pub bootstrap_replications: usize,
    pub multiplier_law: MultiplierLaw,
    pub bootstrap_interval: &'static str,
}

const BOOTSTRAP_INTERVAL: &str = "percentile of theta_db + (theta_db_b - theta_hat)";

impl Ledger {
    fn from_run(cfg: &RunConfig) -> Self {
        Ledger {
            seed: cfg.seed,
            level: cfg.level,
            loss_scale: cfg.loss_scale,
            sigma: cfg.sigma.clone(),
            restrictions: cfg.restrictions.clone(),
            grid: cfg.grid,
            solver: cfg.solver,
            plateau: cfg.plateau,
            debias_variance: cfg.debias_variance,
            bootstrap_replications: cfg.bootstrap.replications,
            multiplier_law: cfg.bootstrap.law,
            bootstrap_interval: BOOTSTRAP_INTERVAL,
        }
    }

    fn from_scenario(spec: &ScenarioSpec) -> Self {
        let pipe = spec.pipeline_config();
        Ledger {
            seed: spec.seed,
            level: spec.level,
            loss_scale: spec.loss_scale,
            sigma: spec.sigma.clone(),
            restrictions: spec.restrictions.clone(),
            grid: pipe.grid,
            solver: pipe.solver,
            plateau: pipe.plateau,
            debias_variance: pipe.debias_variance,
            bootstrap_replications: spec.bootstrap,
            multiplier_law: spec.multiplier_law,
            bootstrap_interval: BOOTSTRAP_INTERVAL,
        }
    }

    fn from_solow(cfg: &SolowConfig, system: &[String]) -> Self {
        let pipe = cfg.pipeline_config();
        Ledger {
            seed: cfg.seed,
            level: cfg.level,
            loss_scale: cfg.loss_scale,
            sigma: SigmaSpec::Identity,
            restrictions: system.to_vec(),
            grid: pipe.grid,
            solver: pipe.solver,
            plateau: pipe.plateau,
            debias_variance: pipe.debias_variance,
            bootstrap_replications: cfg.bootstrap,
            multiplier_law: MultiplierLaw::Rademacher,
            bootstrap_interval: BOOTSTRAP_INTERVAL,
        }
    }
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn pipeline_json(out: &PipelineOutput, data: &Dataset, boundary: Option<f64>) -> Value {
    let db = &out.debiased;
    let members = boundary
        .map(|b| out.isp.members_below(b))
        .unwrap_or_else(|| out.isp.plateau_members.clone());
    json!({
        "estimates": {
            "columns": data.column_names(),
            "theta_unconstrained": vec(&out.theta_tilde),
            "theta_constrained": vec(&out.solution.theta),
            "theta_debiased": vec(&db.theta_db),
            "bias_correction": vec(&db.bias_correction),
            "se": vec(&db.se),
            "se_v1": vec(&db.se_v1),
            "ci_lower": vec(&db.ci_lower),
            "ci_upper": vec(&db.ci_upper),
            "level": db.level,
            "r_squared_unconstrained": data.r_squared(&out.theta_tilde),
        },
        "tolerance": {
            "c_hat": out.c_hat(),
            "c0": out.curve.c0,
            "h_unconstrained": out.h_tilde,
            "lambda": out.solution.lambda,
            "active": out.solution.active,
            "kkt_residual": out.solution.kkt_residual,
            "risk": { "bias": out.bias, "var": out.var, "total": out.risk() },
        },
        "isp": {
            "labels": out.isp.labels,
            "values": vec(&out.isp.isp),
            "se": vec(&out.isp.standard_errors()),
            "covariance": rows(&out.isp.sigma_isp),
            "ascending_order": out.isp.order,
            "cutoff": out.isp.cutoff,
            "boundary": boundary,
            "plateau_members": members,
            "break_statistics": out.isp.break_stats.iter().map(|(m, b)| json!({"m": m, "statistic": b})).collect::<Vec<_>>(),
            "screen_p_values": out.isp.screen_p_values.iter().map(|(m, p)| json!({"m": m, "p_value": p})).collect::<Vec<_>>(),
            "sign_unstable": out.isp.sign_unstable,
            "warnings": out.isp.warnings,
        },
    })
}

fn bootstrap_json(bs: &BootstrapSummary) -> Value {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    json!({
        "replications": bs.replications,
        "succeeded": bs.succeeded.len(),
        "failures": bs.failures.iter().map(|(b, e)| json!({"replication": b, "error": e})).collect::<Vec<_>>(),
        "multiplier_law": bs.law,
        "seed": bs.seed,
        "level": bs.level,
        "ci_lower": vec(&bs.ci_lower),
        "ci_upper": vec(&bs.ci_upper),
        "c_hat_mean": mean(&bs.c_hats),
        "lambda_mean": mean(&bs.lambdas),
        "cutoff": bs.cutoff.as_ref().map(|cd| json!({
            "mean": cd.mean,
            "sd": cd.sd,
            "boundary": cd.boundary,
            "count": cd.count,
            "histogram": cd.histogram.iter().map(|(m, c)| json!({"m": m, "count": c})).collect::<Vec<_>>(),
        })),
    })
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_report(dir: &Path, report: &Value) -> Result<()> {
    write_file(dir, "report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, report).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn header(command: &str, ledger: &Ledger) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("command".into(), json!(command));
    m.insert(
        "ledger".into(),
        serde_json::to_value(ledger).expect("ledger serializes"),
    );
    m
}

pub fn cmd_fit(cfg: &RunConfig, out_dir: &Path, with_bootstrap: bool) -> Result<Value> {
    let command = if with_bootstrap {
        CommandKind::Bootstrap
    } else {
        CommandKind::Fit
    };
    cfg.validate(command)?;
    let dc = cfg.data.as_ref().expect("validated");
    let data = Dataset::from_csv(
        &dc.path,
        &dc.outcome,
        dc.regressors.as_deref(),
        dc.intercept,
    )?;
    let system = RestrictionSystem::parse(&cfg.restrictions, data.p(), &cfg.sigma)?;
    let loss = LeastSquares::new(cfg.loss_scale);
    let pipe = cfg.pipeline_config();
    let out = run_pipeline(&data, &loss, &system, &pipe)?;
    let bs = if cfg.bootstrap.replications > 0 {
        Some(run_bootstrap(
            &data,
            &loss,
            &system,
            &out,
            &cfg.bootstrap_config(),
            &pipe,
        )?)
    } else {
        None
    };
    let boundary = bs
        .as_ref()
        .and_then(|b| b.cutoff.as_ref())
        .map(|cd| cd.boundary);

    fs::create_dir_all(out_dir)?;
    let mut report = header(
        if with_bootstrap { "bootstrap" } else { "fit" },
        &Ledger::from_run(cfg),
    );
    report.insert(
        "data".into(),
        json!({
            "path": dc.path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "outcome": dc.outcome,
            "n": data.n(),
            "p": data.p(),
        }),
    );
    if let Value::Object(m) = pipeline_json(&out, &data, boundary) {
        report.extend(m);
    }
    report.insert(
        "bootstrap".into(),
        bs.as_ref().map(bootstrap_json).unwrap_or(Value::Null),
    );
    let report = Value::Object(report);
    write_report(out_dir, &report)?;
    write_file(out_dir, "risk_curve.csv", |w| out.curve.write_csv(w))?;
    write_file(out_dir, "isp_sorted.csv", |w| {
        out.isp.write_sorted_csv(w, boundary)
    })?;
    if let Some(bs) = &bs {
        write_file(out_dir, "cutoff_histogram.csv", |w| {
            bs.write_cutoff_histogram(w)
        })?;
        if with_bootstrap {
            write_file(out_dir, "bootstrap_replicates.csv", |w| {
                write_replicates(bs, data.column_names(), system.q(), w)
            })?;
        }
    }
    Ok(report)
}

fn write_replicates<W: Write>(
    bs: &BootstrapSummary,
    columns: &[String],
    q: usize,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec![
        "replication".to_string(),
        "c_hat".into(),
        "lambda".into(),
        "cutoff".into(),
    ];
    head.extend(columns.iter().map(|c| format!("theta_db[{c}]")));
    head.extend((0..q).map(|j| format!("isp[{j}]")));
    w.write_record(&head)?;
    for (k, &b) in bs.succeeded.iter().enumerate() {
        let mut rec = vec![
            b.to_string(),
            format!("{:e}", bs.c_hats[k]),
            format!("{:e}", bs.lambdas[k]),
            bs.cutoffs[k].map(|m| m.to_string()).unwrap_or_default(),
        ];
        rec.extend(bs.thetas_debiased.row(k).iter().map(|v| format!("{v:e}")));
        rec.extend(bs.isps.row(k).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The scenario a simulate run uses, with command-line overrides applied.
pub fn scenario_for(cfg: &RunConfig) -> Result<ScenarioSpec> {
    let sim = cfg.simulate.clone().unwrap_or_default();
    let mut spec = match (&sim.scenario, sim.case) {
        (Some(p), _) => ScenarioSpec::from_file(p)?,
        (None, Some(c)) => ScenarioSpec::case(c)?,
        (None, None) => {
            return Err(Error::Config(
                "simulate needs a case number or a scenario file".into(),
            ))
        }
    };
    if let Some(it) = sim.iterations {
        spec.iterations = it;
    }
    Ok(spec)
}

pub fn cmd_simulate(spec: &ScenarioSpec, out_dir: &Path) -> Result<Value> {
    spec.validate()?;
    let study: StudyResult = run_study(spec)?;
    fs::create_dir_all(out_dir)?;
    let mut report = header("simulate", &Ledger::from_scenario(spec));
    report.insert(
        "scenario".into(),
        json!({
            "case_id": spec.case_id,
            "n": spec.n,
            "slopes": spec.slopes,
            "rho": spec.rho,
            "target_snr": spec.target_snr,
            "theta0": spec.theta0,
            "iterations": spec.iterations,
        }),
    );
    report.insert(
        "summary".into(),
        json!({
            "completed": study.completed,
            "failures": study.failures.iter().map(|(i, e)| json!({"iteration": i, "error": e})).collect::<Vec<_>>(),
            "lambda": study.lambda,
            "c_hat": study.c_hat,
            "bias": study.bias,
            "var": study.var,
            "risk": study.risk,
            "r_squared": study.r_squared,
            "boundary": study.boundary,
            "parameters": study.parameters,
            "restrictions": study.restrictions,
        }),
    );
    let report = Value::Object(report);
    write_report(out_dir, &report)?;
    write_file(out_dir, "table1.csv", |w| study.write_table1(w))?;
    write_file(out_dir, "table2.csv", |w| study.write_table2(w))?;
    write_file(out_dir, "figure1.csv", |w| study.write_figure1(w))?;
    Ok(report)
}

pub fn cmd_solow(cfg: &SolowConfig, out_dir: &Path) -> Result<Value> {
    let rep: SolowReport = run_solow(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut report = header("solow", &Ledger::from_solow(cfg, &rep.restrictions));
    report.insert(
        "data".into(),
        json!({
            "path": cfg.data.file_name().map(|f| f.to_string_lossy().into_owned()),
            "n": rep.observations,
            "p": rep.columns.len(),
        }),
    );
    report.insert(
        "solow".into(),
        serde_json::to_value(&rep).map_err(|e| Error::Io(e.to_string()))?,
    );
    let out = rep.pipeline.as_ref().expect("pipeline output kept");
    report.insert(
        "bootstrap".into(),
        rep.bootstrap
            .as_ref()
            .map(bootstrap_json)
            .unwrap_or(Value::Null),
    );
    let report = Value::Object(report);
    write_report(out_dir, &report)?;
    write_file(out_dir, "solow_table.csv", |w| rep.write_table(w))?;
    write_file(out_dir, "risk_curve.csv", |w| out.curve.write_csv(w))?;
    write_file(out_dir, "isp_sorted.csv", |w| {
        out.isp.write_sorted_csv(w, rep.plateau_boundary)
    })?;
    Ok(report)
}

pub fn cmd_example_data(out_dir: &Path, rows: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let solow = synthetic_rows(rows, 1.3791, 4.6, 0.35, seed);
    write_file(out_dir, "solow_synthetic.csv", |w| {
        write_solow_csv(&solow, w)
    })?;
    write_file(out_dir, "ridge_example.csv", |w| {
        crate::montecarlo::write_example_csv(seed, w)
    })?;
    Ok(())
}

/// Resolve overrides (flag, then environment, then config file) and run.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = cli.level {
        cfg.level = l;
    }
    if let Some(b) = cli.bootstrap {
        cfg.bootstrap.replications = b;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if cfg.workers == Some(0) {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| match &cli.command {
        Command::Fit => cmd_fit(&cfg, &out_dir, false).map(drop),
        Command::Bootstrap => {
            if cfg.bootstrap.replications == 0 {
                cfg.bootstrap.replications = BootstrapConfig::default().replications;
            }
            cmd_fit(&cfg, &out_dir, true).map(drop)
        }
        Command::Simulate { case, iterations } => {
            let mut sim = cfg.simulate.clone().unwrap_or_default();
            if case.is_some() {
                sim.case = *case;
                sim.scenario = None;
            }
            if iterations.is_some() {
                sim.iterations = *iterations;
            }
            cfg.simulate = Some(sim);
            cfg.validate(CommandKind::Simulate)?;
            let mut spec = scenario_for(&cfg)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(l) = cli.level {
                spec.level = l;
            }
            if let Some(b) = cli.bootstrap {
                spec.bootstrap = b;
            }
            cmd_simulate(&spec, &out_dir).map(drop)
        }
        Command::Solow => {
            cfg.validate(CommandKind::Solow)?;
            let mut s = cfg.solow.clone().expect("validated");
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if let Some(l) = cli.level {
                s.level = l;
            }
            if let Some(b) = cli.bootstrap {
                s.bootstrap = b;
            }
            cmd_solow(&s, &out_dir).map(drop)
        }
        Command::ExampleData { rows } => cmd_example_data(&out_dir, *rows, cfg.seed),
    })
}

/// Entry point for the binary: one-line diagnostic and exit code on failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
