//! Command implementations behind the `retrialq` binary.
//!
//! Every command reads an [`ExperimentConfig`] (JSON), applies flag
//! overrides, and writes JSON and/or CSV either to `--out DIR` or to
//! stdout. Failures map onto fixed exit codes, see [`CliError::exit_code`].

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use retrialq::analytic::{AnalyticError, LossFamily};
use retrialq::oracle::{self, OracleError, RetrialParams};
use retrialq::regen::{self, RegenError};
use retrialq::simcore::{self, Mode, SimError, StopRule, SystemConfig};
use retrialq::stability::{self, StabilityError, StabilityReport};
use retrialq::{ploss_dispatch, Dispatch, Ploss, VERSION};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INSUFFICIENT_DATA: i32 = 4;
pub const EXIT_NON_CONVERGENCE: i32 = 5;

/// Cycles simulated when neither the config nor the flags give a stop rule.
pub const DEFAULT_CYCLES: u64 = 10_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical refusal: {0}")]
    Numerical(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::InsufficientData(_) => EXIT_INSUFFICIENT_DATA,
            CliError::NonConvergence(_) => EXIT_NON_CONVERGENCE,
            CliError::Io(_) => 1,
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::NumericalInstability { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Analytic(a) => a.into(),
            StabilityError::NoBracketRefinement { .. } => CliError::NonConvergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnreachedCycleCount { .. } => CliError::InsufficientData(e.to_string()),
            SimError::InvariantViolation { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<RegenError> for CliError {
    fn from(e: RegenError) -> Self {
        match e {
            RegenError::BadLevel(_) => CliError::Config(e.to_string()),
            other => CliError::InsufficientData(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NotConverged { .. } => CliError::NonConvergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(io::Error::other(e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "retrialq", version, about = "Stability, loss and simulation for retrial queues with constant retrial rate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Loss probability of the auxiliary queue (closed form or simulation)
    Ploss,
    /// Regenerative simulation: per-cycle CSV and a summary
    Simulate,
    /// Evaluate the sufficient stability condition
    Stability,
    /// Stability intervals in the retrial rate
    Boundary,
    /// Stationary solution of the truncated Markovian retrial chain
    Oracle,
    /// Grid over arrival and retrial rates
    Sweep,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Experiment config (JSON)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Write outputs into this directory instead of stdout
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "X")]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub cycles: Option<u64>,
    #[arg(long, global = true, value_name = "T")]
    pub horizon: Option<f64>,
}

/// Everything one command run needs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stop: Option<StopRule>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default = "default_mu0_min")]
    pub mu0_min: f64,
    #[serde(default = "default_mu0_max")]
    pub mu0_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_mu0_min() -> f64 {
    1e-4
}

fn default_mu0_max() -> f64 {
    1e4
}

fn default_grid_points() -> usize {
    stability::DEFAULT_GRID_POINTS
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec { mu0_min: default_mu0_min(), mu0_max: default_mu0_max(), grid_points: default_grid_points() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// Orbit truncation level (the start level when `auto` is set).
    #[serde(default = "default_nmax")]
    pub nmax: usize,
    /// Double `nmax` until the truncation mass is negligible.
    #[serde(default = "default_true")]
    pub auto: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_nmax() -> usize {
    64
}

fn default_true() -> bool {
    true
}

fn default_max_iter() -> usize {
    oracle::DEFAULT_MAX_ITER
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { nmax: default_nmax(), auto: true, max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Arrival rates; the interarrival law is rescaled to each mean.
    pub lambda: Vec<f64>,
    pub mu0: Vec<f64>,
    /// Also simulate every point (seed = base seed + grid index). Without
    /// an explicit horizon each run is capped at `100 * cycles / lambda`
    /// time units, so unstable points (which stop regenerating) finish; the
    /// row reports how many cycles completed.
    #[serde(default)]
    pub simulate: bool,
}

/// Horizon multiplier for sweep simulations without an explicit horizon.
pub const SWEEP_HORIZON_FACTOR: f64 = 100.0;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if let Some(t) = self.tol {
            check_tol(t)?;
        }
        if let Some(s) = &self.sweep {
            let ok = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
            if !ok(&s.lambda) || !ok(&s.mu0) {
                return Err(CliError::Config("sweep lambda and mu0 must be non-empty lists of positive rates".into()));
            }
        }
        Ok(())
    }

    /// Flags win over config values.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(t) = o.tol {
            check_tol(t)?;
            self.tol = Some(t);
        }
        if o.cycles.is_some() || o.horizon.is_some() {
            let mut stop = self.stop.unwrap_or_default();
            if o.cycles.is_some() {
                stop.cycles = o.cycles;
            }
            if o.horizon.is_some() {
                stop.horizon = o.horizon;
            }
            self.stop = Some(stop);
        }
        if let Some(dir) = &o.out {
            self.out = Some(dir.clone());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn stop_rule(&self) -> StopRule {
        self.stop.unwrap_or(StopRule::cycles(DEFAULT_CYCLES))
    }
}

fn check_tol(t: f64) -> Result<(), CliError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("tolerance must be > 0, got {t}")))
    }
}

/// `#` comment placed above every CSV header.
pub fn csv_comment(command: Command, seed: u64) -> String {
    format!("retrialq {VERSION} {} seed={seed}", command_name(command))
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Ploss => "ploss",
        Command::Simulate => "simulate",
        Command::Stability => "stability",
        Command::Boundary => "boundary",
        Command::Oracle => "oracle",
        Command::Sweep => "sweep",
    }
}

/// Caps the global rayon pool from `RETRIALQ_THREADS`, if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RETRIALQ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("RETRIALQ_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool that already exists (tests calling twice) is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    let path = cli
        .overrides
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    config.apply(&cli.overrides)?;
    let mut sink = Sink::new(config.out.clone())?;
    match cli.command {
        Command::Ploss => cmd_ploss(&config, &mut sink),
        Command::Simulate => cmd_simulate(&config, &mut sink),
        Command::Stability => cmd_stability(&config, &mut sink),
        Command::Boundary => cmd_boundary(&config, &mut sink),
        Command::Oracle => cmd_oracle(&config, &mut sink),
        Command::Sweep => cmd_sweep(&config, &mut sink),
    }
}

/// Output destination: files in a directory, or stdout.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Sink { dir })
    }

    /// JSON goes to `<dir>/<name>` or stdout.
    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json values serialize");
        match &self.dir {
            Some(d) => fs::write(d.join(name), text + "\n")?,
            None => writeln!(io::stdout().lock(), "{text}")?,
        }
        Ok(())
    }

    /// CSV goes to `<dir>/<name>`, or to stdout when `to_stdout` is set.
    pub fn csv(&mut self, name: &str, bytes: &[u8], to_stdout: bool) -> Result<(), CliError> {
        match &self.dir {
            Some(d) => fs::write(d.join(name), bytes)?,
            None if to_stdout => io::stdout().lock().write_all(bytes)?,
            None => {}
        }
        Ok(())
    }

    pub fn has_dir(&self) -> bool {
        self.dir.is_some()
    }
}

fn inputs_json(config: &ExperimentConfig) -> Value {
    json!({
        "system": config.system,
        "lambda": config.system.arrival_rate(),
        "mu": config.system.service_rate(),
        "mu0": config.system.retrial_rate,
    })
}

/// Loss probability of the auxiliary queue: closed form when one applies,
/// otherwise a regenerative estimate from a Σ̂-mode run.
pub enum LossValue {
    Closed(Ploss),
    Simulated { ploss: Ploss, estimate: regen::RatioEstimate, seed: u64 },
}

impl LossValue {
    pub fn ploss(&self) -> Ploss {
        match self {
            LossValue::Closed(p) | LossValue::Simulated { ploss: p, .. } => *p,
        }
    }
}

pub fn loss_value(system: &SystemConfig, stop: StopRule, seed: u64, level: f64) -> Result<LossValue, CliError> {
    match ploss_dispatch(system)? {
        Dispatch::Closed { probability, formula } => Ok(LossValue::Closed(Ploss::formula(probability, formula))),
        Dispatch::Unsupported => {
            let aux = system.clone().with_mode(Mode::Auxiliary);
            let out = simcore::simulate(&aux, stop, seed)?;
            simcore::require_cycles(&out, stop)?;
            let estimate = regen::loss_estimate(&out.completed_cycles, level)?;
            Ok(LossValue::Simulated {
                ploss: Ploss::simulated(estimate.point, estimate.ci_lo, estimate.ci_hi),
                estimate,
                seed,
            })
        }
    }
}

pub fn cmd_ploss(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let value = match loss_value(&config.system, config.stop_rule(), config.seed(), config.level)? {
        LossValue::Closed(p) => {
            let formula = match p.source {
                stability::PlossSource::Formula { formula } => formula.name(),
                _ => unreachable!("closed values carry their formula"),
            };
            json!({ "value": p.value, "formula": formula, "inputs": inputs_json(config) })
        }
        LossValue::Simulated { estimate, seed, .. } => json!({
            "estimate": estimate.to_json(),
            "simulation": { "seed": seed, "mode": "auxiliary", "stop": config.stop_rule() },
            "inputs": inputs_json(config),
        }),
    };
    sink.json("ploss.json", &value)
}

fn estimate_or_null(r: Result<regen::RatioEstimate, RegenError>) -> Value {
    r.map(|e| e.to_json()).unwrap_or(Value::Null)
}

pub fn cmd_simulate(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let stop = config.stop_rule();
    let seed = config.seed();
    let out = simcore::simulate(&config.system, stop, seed)?;
    simcore::require_cycles(&out, stop)?;
    let mut csv_bytes = Vec::new();
    regen::write_cycles_csv(&mut csv_bytes, &out.completed_cycles, &csv_comment(Command::Simulate, seed))?;
    let cycles = &out.completed_cycles;
    let delta0 = match ploss_dispatch(&config.system) {
        Ok(Dispatch::Closed { probability, formula }) => {
            Some(stability::evaluate(&config.system, Ploss::formula(probability, formula)).delta0)
        }
        _ => None,
    };
    let summary = json!({
        "seed": seed,
        "version": VERSION,
        "mode": config.system.mode,
        "stop": stop,
        "stop_reason": out.stop_reason,
        "completed_cycles": out.stationary_cycles().count(),
        "regenerations": out.regenerations,
        "event_count": out.event_count,
        "elapsed": out.path_stats.elapsed,
        "orbit_empty_fraction": out.path_stats.orbit_empty_fraction(),
        "time_avg_orbit": out.path_stats.time_avg_orbit(),
        "loss_ratio": out.path_stats.loss_ratio(),
        "loss": estimate_or_null(regen::loss_estimate(cycles, config.level)),
        "orbit_empty": estimate_or_null(regen::orbit_empty_estimate(cycles, config.level)),
        "mean_cycle_duration": estimate_or_null(regen::mean_cycle(cycles, regen::CycleField::Duration, config.level)),
        "delta0": delta0,
    });
    if sink.has_dir() {
        sink.csv("cycles.csv", &csv_bytes, false)?;
        sink.json("summary.json", &summary)
    } else {
        sink.csv("cycles.csv", &csv_bytes, true)?;
        let text = serde_json::to_string_pretty(&summary).expect("json values serialize");
        writeln!(io::stderr().lock(), "{text}")?;
        Ok(())
    }
}

pub fn stability_report(config: &ExperimentConfig) -> Result<(StabilityReport, LossValue), CliError> {
    let loss = loss_value(&config.system, config.stop_rule(), config.seed(), config.level)?;
    Ok((stability::evaluate(&config.system, loss.ploss()), loss))
}

pub fn cmd_stability(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (report, loss) = stability_report(config)?;
    let mut value = serde_json::to_value(report).expect("report serializes");
    value["markovian_stable"] = json!(report.markovian_stable());
    if let LossValue::Simulated { estimate, seed, .. } = loss {
        value["simulation"] = json!({ "seed": seed, "estimate": estimate.to_json() });
    }
    value["inputs"] = inputs_json(config);
    sink.json("stability.json", &value)
}

fn family_of(system: &SystemConfig) -> Result<LossFamily, CliError> {
    LossFamily::for_config(system).ok_or_else(|| {
        CliError::Config("no closed-form loss model for this system (needs Poisson arrivals; see docs)".into())
    })
}

pub fn cmd_boundary(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let family = family_of(&config.system)?;
    let lambda = config.system.arrival_rate();
    let b = &config.boundary;
    let range = (b.mu0_min, b.mu0_max);
    let tol = config.tol.unwrap_or(stability::DEFAULT_TOL);
    let intervals = stability::stability_intervals_mu0(lambda, &family, range, b.grid_points, tol)?;
    let curve = stability::margin_curve(lambda, &family, range, b.grid_points)?;
    let value = json!({
        "lambda": lambda,
        "family": family,
        "range": [b.mu0_min, b.mu0_max],
        "grid_points": b.grid_points,
        "tol": tol,
        "intervals": intervals,
    });
    let mut bytes = Vec::new();
    writeln!(bytes, "# {}", csv_comment(Command::Boundary, config.seed()))?;
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["mu0", "g"])?;
        for (m, g) in curve {
            w.write_record([m.to_string(), g.to_string()])?;
        }
        w.flush()?;
    }
    sink.json("boundary.json", &value)?;
    sink.csv("margin.csv", &bytes, false)
}

pub fn cmd_oracle(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let s = &config.system;
    if !s.is_markovian() {
        return Err(CliError::Config("oracle needs exponential interarrival and service times".into()));
    }
    let params = RetrialParams { lambda: s.arrival_rate(), mu: s.service_rate(), mu0: s.retrial_rate, c: s.servers, k: s.capacity };
    let tol = config.tol.unwrap_or(oracle::DEFAULT_TOL);
    let o = &config.oracle;
    let (model, result, diagnostics, resolved) = if o.auto {
        let a = oracle::solve_auto_truncated(params, o.nmax, tol, o.max_iter)?;
        if a.result.residual > tol {
            return Err(CliError::NonConvergence(format!(
                "residual {:e} after {} sweeps at Nmax = {}",
                a.result.residual, a.result.iterations, a.model.nmax
            )));
        }
        (a.model, a.result, a.diagnostics, a.resolved)
    } else {
        let model = oracle::build_retrial_ctmc(params, o.nmax)?;
        let result = oracle::stationary(&model, tol, o.max_iter)?;
        let d = oracle::orbit_diagnostics(&result, &model);
        let resolved = d.truncation_mass < oracle::AUTO_TRUNCATION_TARGET;
        (model, result, d, resolved)
    };
    let value = json!({
        "params": params,
        "nmax": model.nmax,
        "residual": result.residual,
        "iterations": result.iterations,
        "truncation_mass": diagnostics.truncation_mass,
        "resolved": resolved,
        "diagnostics": diagnostics,
    });
    sink.json("oracle.json", &value)?;
    if sink.has_dir() {
        let mut bytes = Vec::new();
        writeln!(bytes, "# {}", csv_comment(Command::Oracle, config.seed()))?;
        {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(["orbit", "occupancy", "probability"])?;
            for (i, p) in result.pi.iter().enumerate() {
                let (n, m) = model.decode(i);
                w.write_record([n.to_string(), m.to_string(), p.to_string()])?;
            }
            w.flush()?;
        }
        sink.csv("pi.csv", &bytes, false)?;
    }
    Ok(())
}

pub const SWEEP_COLUMNS: [&str; 15] = [
    "index",
    "seed",
    "lambda",
    "mu0",
    "ploss",
    "ploss_source",
    "lhs",
    "rhs",
    "delta0",
    "verdict",
    "sim_cycles",
    "sim_loss",
    "sim_loss_ci_lo",
    "sim_loss_ci_hi",
    "sim_orbit_empty_fraction",
];

fn sweep_row(
    base: &SystemConfig,
    lambda: f64,
    mu0: f64,
    index: usize,
    seed: u64,
    config: &ExperimentConfig,
    simulate: bool,
) -> Result<Vec<String>, CliError> {
    let mut system = base.clone();
    system.interarrival = system.interarrival.with_mean(1.0 / lambda).map_err(|e| CliError::Config(e.to_string()))?;
    system.retrial_rate = mu0;
    let stop = config.stop_rule();
    let loss = loss_value(&system, stop, seed, config.level)?;
    let report = stability::evaluate(&system, loss.ploss());
    let source = match report.ploss.source {
        stability::PlossSource::Formula { formula } => formula.name(),
        stability::PlossSource::Simulation { .. } => "simulation",
        stability::PlossSource::Given => "given",
    };
    let verdict = serde_json::to_value(report.verdict).expect("verdict serializes");
    let mut row = vec![
        index.to_string(),
        seed.to_string(),
        lambda.to_string(),
        mu0.to_string(),
        report.ploss.value.to_string(),
        source.to_string(),
        report.lhs.to_string(),
        report.rhs.to_string(),
        report.delta0.to_string(),
        verdict.as_str().unwrap_or_default().to_string(),
    ];
    if simulate {
        let mut stop = stop;
        if stop.horizon.is_none() {
            let cycles = stop.cycles.unwrap_or(DEFAULT_CYCLES) as f64;
            stop.horizon = Some(SWEEP_HORIZON_FACTOR * cycles / lambda);
        }
        let out = simcore::simulate(&system, stop, seed)?;
        let est = regen::loss_estimate(&out.completed_cycles, config.level).ok();
        row.push(out.stationary_cycles().count().to_string());
        match est {
            Some(e) => row.extend([e.point.to_string(), e.ci_lo.to_string(), e.ci_hi.to_string()]),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.push(out.path_stats.orbit_empty_fraction().to_string());
    } else {
        row.extend(std::iter::repeat_n(String::new(), 5));
    }
    Ok(row)
}

pub fn cmd_sweep(config: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a \"sweep\" block with lambda and mu0 lists".into()))?;
    let base_seed = config.seed();
    let points: Vec<(usize, f64, f64)> = spec
        .lambda
        .iter()
        .flat_map(|&l| spec.mu0.iter().map(move |&m| (l, m)))
        .enumerate()
        .map(|(i, (l, m))| (i, l, m))
        .collect();
    // Each worker owns its point; rows come back in grid order.
    let rows: Vec<Vec<String>> = points
        .par_iter()
        .map(|&(i, l, m)| sweep_row(&config.system, l, m, i, base_seed.wrapping_add(i as u64), config, spec.simulate))
        .collect::<Result<_, _>>()?;
    let mut bytes = Vec::new();
    writeln!(bytes, "# {}", csv_comment(Command::Sweep, base_seed))?;
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(SWEEP_COLUMNS)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    sink.csv("sweep.csv", &bytes, true)
}
