//! The `varq` batch front-end.
//!
//! Every run writes `report.json` (deterministic for a fixed config and
//! seed), an optional CSV table, and `manifest.json` carrying the wall time
//! and SHA-256 digests of the other outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, DEFAULT_HITTING_STARTS, DEFAULT_TIME_GRID};
use crate::error::{ConfigError, EstimateError};
use crate::estimators::{
    availability_factor, collect_cycles_parallel, convergence_experiment, dynkin_residual,
    dynkin_residual_time, hitting_moment_experiment, jump_probability_experiment,
    lag1_autocorrelation, occupancy_distribution, stationary_functional, two_jump_ratios,
    DynkinEstimate, EstimateCI, StartSpec, StationaryReference, CYCLE_CHUNKS,
};
use crate::intensity::IntensityField;
use crate::rng::{fork, STREAM_SCHEME};
use crate::simulator::{
    simulate_path, CycleSpec, EventKind, RegenerationCycle, Sampler, StateFunctional,
};
use crate::state::lyapunov_l;
use crate::testfn::{Capped, Lyapunov, TimeLyapunov};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CONDITIONS: i32 = 2;
pub const EXIT_GATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "varq",
    version,
    about = "Simulate and verify state-dependent single-server queues"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all available).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Event-time sampler.
    #[arg(long, global = true)]
    pub sampler: Option<Sampler>,
    /// Exit with code 3 when a statistical check fails.
    #[arg(long, global = true)]
    pub gate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check boundedness and the service/idle-arrival conditions on a grid.
    Validate,
    /// Simulate one trajectory.
    Simulate,
    /// Stationary queue-length law and mean from regeneration cycles.
    Stationary,
    /// Hitting-time moments of the empty state against Lyapunov weights.
    Hitting,
    /// Dynkin-formula residuals for Lyapunov test functions.
    Dynkin,
    /// Small-interval jump probabilities.
    Jumpprob,
    /// Total-variation convergence to the stationary queue-length law.
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Stationary => "stationary",
            Command::Hitting => "hitting",
            Command::Dynkin => "dynkin",
            Command::Jumpprob => "jumpprob",
            Command::Converge => "converge",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

struct Outcome {
    result: Value,
    table: Option<(&'static str, String)>,
    checks: Vec<Check>,
    /// Failure that exits non-zero regardless of `--gate`.
    hard_failure: Option<i32>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Self {
            result,
            table: None,
            checks: Vec::new(),
            hard_failure: None,
        }
    }
}

#[derive(Debug)]
enum RunError {
    Config(String),
    Failed(String),
}

impl From<EstimateError> for RunError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Invalid(_) | EstimateError::MomentOrder { .. } => {
                RunError::Config(e.to_string())
            }
            other => RunError::Failed(other.to_string()),
        }
    }
}

impl From<crate::error::SimError> for RunError {
    fn from(e: crate::error::SimError) -> Self {
        RunError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Failed(e.to_string())
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = cli.sampler {
        cfg.experiment.sampler = Some(s);
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    let cfg = match load(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let field = match cfg.field() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = pool.install(|| dispatch(cli.command, &cfg, &field));
    let outcome = match outcome {
        Ok(o) => o,
        Err(RunError::Config(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
        Err(RunError::Failed(msg)) => {
            eprintln!("error: {}: {msg}", cli.command.name());
            return EXIT_GATE;
        }
    };
    let passed = outcome.checks.iter().all(|c| c.passed);
    for c in &outcome.checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if let Err(e) = write_outputs(cli.command, &cfg, &outcome, passed, started) {
        eprintln!(
            "error: writing outputs to {}: {e}",
            cfg.output_dir.display()
        );
        return EXIT_CONFIG;
    }
    if let Some(code) = outcome.hard_failure {
        return code;
    }
    if cli.gate && !passed {
        return EXIT_GATE;
    }
    EXIT_OK
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_outputs(
    command: Command,
    cfg: &ExperimentConfig,
    outcome: &Outcome,
    passed: bool,
    started: Instant,
) -> std::io::Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    // the output location is not part of the experiment
    let mut echo = to_value(cfg);
    if let Value::Object(map) = &mut echo {
        map.remove("output_dir");
    }
    let report = json!({
        "command": command.name(),
        "seed": cfg.seed,
        "sampler": cfg.sampler(),
        "config": echo,
        "result": outcome.result,
        "checks": outcome.checks,
        "passed": passed,
    });
    let mut files: Vec<(String, Vec<u8>)> = vec![("report.json".into(), pretty(&report))];
    if let Some((name, body)) = &outcome.table {
        files.push(((*name).to_string(), body.clone().into_bytes()));
    }
    let mut digests = serde_json::Map::new();
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
        digests.insert(name.clone(), Value::String(sha256_hex(bytes)));
    }
    let manifest = json!({
        "tool": "varq",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": cfg,
        "seeds": {
            "master_seed": cfg.seed,
            "scheme": STREAM_SCHEME,
            "replicas": "replica r of a sub-experiment with tag j uses master fork(seed, j) and stream r",
        },
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "outputs": digests,
    });
    write_file(&dir.join("manifest.json"), &pretty(&manifest))
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s.into_bytes()
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn dispatch(
    command: Command,
    cfg: &ExperimentConfig,
    field: &IntensityField,
) -> Result<Outcome, RunError> {
    if command == Command::Validate {
        return Ok(cmd_validate(cfg, field));
    }
    let report = field.validate_conditions(&cfg.grid());
    if !report.boundedness_ok || !report.domain_errors.is_empty() {
        let mut out = Outcome::new(json!({ "conditions": report }));
        out.checks.push(Check::new(
            "boundedness",
            false,
            format!(
                "declared sups ({}, {}) vs grid ({}, {}); {} domain error(s)",
                report.lambda_sup_declared,
                report.h_sup_declared,
                report.lambda_sup_grid,
                report.h_sup_grid,
                report.domain_errors.len()
            ),
        ));
        out.hard_failure = Some(EXIT_CONDITIONS);
        return Ok(out);
    }
    let mut out = match command {
        Command::Validate => unreachable!(),
        Command::Simulate => cmd_simulate(cfg, field)?,
        Command::Stationary => cmd_stationary(cfg, field)?,
        Command::Hitting => cmd_hitting(cfg, field)?,
        Command::Dynkin => cmd_dynkin(cfg, field)?,
        Command::Jumpprob => cmd_jumpprob(cfg, field)?,
        Command::Converge => cmd_converge(cfg, field)?,
    };
    if let Value::Object(map) = &mut out.result {
        map.insert("conditions".into(), to_value(&report));
    }
    Ok(out)
}

fn cmd_validate(cfg: &ExperimentConfig, field: &IntensityField) -> Outcome {
    let r = field.validate_conditions(&cfg.grid());
    let mut out = Outcome::new(to_value(&r));
    out.checks = vec![
        Check::new(
            "boundedness",
            r.boundedness_ok,
            format!(
                "lambda_sup {} (grid {}), h_sup {} (grid {})",
                r.lambda_sup_declared, r.lambda_sup_grid, r.h_sup_declared, r.h_sup_grid
            ),
        ),
        Check::new(
            "service_hazard",
            r.service_hazard_ok,
            format!("c0_estimate = {}", r.c0_estimate),
        ),
        Check::new(
            "idle_arrival",
            r.idle_arrival_ok,
            format!("lambda0 in [{}, {}]", r.lambda0_inf, r.lambda0_sup),
        ),
        Check::new(
            "domain",
            r.domain_errors.is_empty(),
            r.domain_errors
                .first()
                .cloned()
                .unwrap_or_else(|| "no evaluation errors".into()),
        ),
    ];
    if !r.passed() {
        out.hard_failure = Some(EXIT_CONDITIONS);
    }
    out
}

fn cmd_simulate(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let horizon = cfg.experiment.horizon.unwrap_or(100.0);
    let start = cfg.start();
    let path = simulate_path(
        field,
        start,
        horizon,
        crate::rng::SeedSpec::new(cfg.seed, 0),
        cfg.sampler(),
    )?;
    let mut csv = Vec::new();
    path.write_csv(&mut csv)?;
    let arrivals = path.arrivals();
    let mut out = Outcome::new(json!({
        "start": start,
        "horizon": horizon,
        "events": path.events.len(),
        "arrivals": arrivals,
        "service_ends": path.events.iter().filter(|e| e.kind == EventKind::ServiceEnd).count(),
        "final_state": path.state_at(horizon),
    }));
    out.table = Some((
        "trajectory.csv",
        String::from_utf8(csv).expect("csv is utf-8"),
    ));
    Ok(out)
}

fn ci_json(e: &EstimateCI) -> Value {
    to_value(e)
}

fn cmd_stationary(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let e = &cfg.experiment;
    let mut spec = CycleSpec::new(e.cycles.unwrap_or(100_000))
        .with_warmup(e.warmup_cycles.unwrap_or(0))
        .with_functionals(vec![StateFunctional::queue_length()]);
    spec.cycle_cap = cfg.cycle_cap();
    spec.sampler = cfg.sampler();
    let cycles = collect_cycles_parallel(field, &spec, cfg.seed, CYCLE_CHUNKS)?;
    let m_max = e.m_max.unwrap_or(10);
    let probs = occupancy_distribution(&cycles);
    let mut rows = Vec::new();
    let mut csv = String::from("m,value,std_error,ci_low,ci_high\n");
    for m in 0..=m_max {
        let a = availability_factor(&cycles, m)?;
        csv.push_str(&format!(
            "{m},{},{},{},{}\n",
            a.value, a.std_error, a.ci_low, a.ci_high
        ));
        rows.push(json!({ "m": m, "estimate": ci_json(&a) }));
    }
    let total: f64 = probs.iter().sum();
    let mean = stationary_functional(&cycles, 0)?;
    let lengths: Vec<f64> = cycles.iter().map(RegenerationCycle::length).collect();
    let lag1 = lag1_autocorrelation(&lengths);
    let lag1_bound = 4.0 / (lengths.len() as f64).sqrt();
    let mut out = Outcome::new(json!({
        "num_cycles": cycles.len(),
        "cycle_length": ci_json(&EstimateCI::from_samples(&lengths)),
        "cycle_length_lag1_autocorrelation": lag1,
        "availability": rows,
        "availability_sum": total,
        "max_observed_n": probs.len().saturating_sub(1),
        "mean_number": ci_json(&mean),
    }));
    out.checks = vec![
        Check::new(
            "partition",
            (total - 1.0).abs() <= 1e-12,
            format!("sum of availability factors = {total}"),
        ),
        Check::new(
            "cycle_independence",
            lag1.abs() <= lag1_bound,
            format!("lag-1 autocorrelation {lag1:.4}, bound {lag1_bound:.4}"),
        ),
    ];
    out.table = Some(("table.csv", csv));
    Ok(out)
}

fn cmd_hitting(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let e = &cfg.experiment;
    let starts = e
        .starts
        .clone()
        .unwrap_or_else(|| DEFAULT_HITTING_STARTS.to_vec());
    let (k, m) = (e.k.unwrap_or(1), e.m.unwrap_or(2));
    let rep = hitting_moment_experiment(
        field,
        &starts,
        k,
        m,
        e.replicas.unwrap_or(10_000),
        cfg.seed,
        cfg.hitting_cap(),
        cfg.sampler(),
    )?;
    let mut csv = String::from("n,x,y,value,std_error,ci_low,ci_high,lyapunov,ratio,censored\n");
    for r in &rep.rows {
        let c = &r.moment;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.start.n,
            r.start.x,
            r.start.y,
            c.value,
            c.std_error,
            c.ci_low,
            c.ci_high,
            r.lyapunov,
            r.ratio,
            r.censored
        ));
    }
    let mut out = Outcome::new(to_value(&rep));
    // boundedness of E tau^k / L_m: no start exceeds 1.5x the lightest start's ratio
    let base = rep
        .rows
        .iter()
        .filter(|r| r.start.n > 0)
        .min_by(|a, b| lyapunov_l(&a.start, m).total_cmp(&lyapunov_l(&b.start, m)));
    if let Some(base) = base {
        let limit = 1.5 * base.ratio;
        out.checks.push(Check::new(
            "ratio_bounded",
            rep.max_ratio <= limit,
            format!(
                "max ratio {:.4} vs 1.5 x {:.4} = {:.4}",
                rep.max_ratio, base.ratio, limit
            ),
        ));
    }
    out.table = Some(("table.csv", csv));
    Ok(out)
}

fn dynkin_json(name: &str, truncated: &DynkinEstimate, raw: &DynkinEstimate) -> Value {
    json!({ "function": name, "truncated": to_value(truncated), "raw": to_value(raw) })
}

fn cmd_dynkin(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let e = &cfg.experiment;
    let start = cfg.start();
    let t = e.t.unwrap_or(5.0);
    let replicas = e.replicas.unwrap_or(10_000);
    let cap = e.truncation.unwrap_or(1e3);
    let sampler = cfg.sampler();
    let seed = cfg.seed;
    let mut results = Vec::new();
    let mut checks = Vec::new();
    let mut csv = String::from("function,version,value,std_error,ci_low,ci_high,scale\n");
    let mut record = |name: &str, tr: DynkinEstimate, raw: DynkinEstimate| {
        for (version, d) in [("truncated", &tr), ("raw", &raw)] {
            let r = &d.residual;
            csv.push_str(&format!(
                "{name},{version},{},{},{},{},{}\n",
                r.value, r.std_error, r.ci_low, r.ci_high, d.scale
            ));
        }
        checks.push(Check::new(
            format!("residual_{name}"),
            tr.passes(3.0, 0.02),
            format!(
                "residual {:.3e} +- {:.3e}, scale {:.3}",
                tr.residual.value, tr.residual.std_error, tr.scale
            ),
        ));
        results.push(dynkin_json(name, &tr, &raw));
    };
    for m in [1, 2] {
        let tr = dynkin_residual(
            field,
            &Capped::new(Lyapunov { m }, cap),
            start,
            t,
            replicas,
            seed,
            sampler,
        )?;
        let raw = dynkin_residual(field, &Lyapunov { m }, start, t, replicas, seed, sampler)?;
        record(&format!("L{m}"), tr, raw);
    }
    let phi = TimeLyapunov { k: 1, m: 2 };
    let tr = dynkin_residual_time(
        field,
        &Capped::new(phi, cap),
        start,
        t,
        replicas,
        seed,
        sampler,
    )?;
    let raw = dynkin_residual_time(field, &phi, start, t, replicas, seed, sampler)?;
    record("L1_2", tr, raw);
    let mut out = Outcome::new(json!({
        "start": start,
        "t": t,
        "replicas": replicas,
        "truncation": cap,
        "functions": results,
    }));
    out.checks = checks;
    out.table = Some(("table.csv", csv));
    Ok(out)
}

fn cmd_jumpprob(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let e = &cfg.experiment;
    let deltas = e.deltas.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
    let rows = jump_probability_experiment(
        field,
        cfg.start(),
        &deltas,
        e.trials.unwrap_or(100_000),
        cfg.seed,
        cfg.sampler(),
    )?;
    let ratios = two_jump_ratios(&rows);
    let mut out =
        Outcome::new(json!({ "start": cfg.start(), "rows": rows, "two_jump_ratios": ratios }));
    let mut csv = String::from("delta,p_none,survival,p_one_up,int_lambda,p_one_down,int_h,p_two_or_more,two_or_more_scaled\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.delta,
            r.p_none,
            r.survival,
            r.p_one_up,
            r.int_lambda,
            r.p_one_down,
            r.int_h,
            r.p_two_or_more,
            r.two_or_more_scaled
        ));
        out.checks.push(Check::new(
            format!("no_jump_delta_{}", r.delta),
            r.none_ok,
            format!("{:.5} vs survival {:.5}", r.p_none, r.survival),
        ));
        out.checks.push(Check::new(
            format!("one_jump_delta_{}", r.delta),
            r.up_ok && r.down_ok,
            format!(
                "up {:.5} vs {:.5}, down {:.5} vs {:.5}",
                r.p_one_up, r.int_lambda, r.p_one_down, r.int_h
            ),
        ));
    }
    for (i, q) in ratios.iter().enumerate() {
        out.checks.push(Check::new(
            format!("two_jump_ratio_{i}"),
            (0.15..=0.6).contains(q),
            format!(
                "P(>=2) ratio {q:.4} between delta {} and {}",
                rows[i].delta,
                rows[i + 1].delta
            ),
        ));
    }
    out.table = Some(("table.csv", csv));
    Ok(out)
}

fn cmd_converge(cfg: &ExperimentConfig, field: &IntensityField) -> Result<Outcome, RunError> {
    let e = &cfg.experiment;
    let times = e
        .time_grid
        .clone()
        .unwrap_or_else(|| DEFAULT_TIME_GRID.to_vec());
    let reference = StationaryReference::build(
        field,
        e.reference_cycles.unwrap_or(100_000),
        cfg.sampler(),
        fork(cfg.seed, 3),
    )?;
    let start = cfg.convergence_start();
    let opts = cfg.convergence_options();
    let curve = convergence_experiment(field, start, &times, &reference, &opts, cfg.seed)?;
    let mut csv = String::from("t,tv,tv_noise_floor\n");
    for (t, tv) in curve.times.iter().zip(&curve.tv_estimates) {
        csv.push_str(&format!("{t},{tv},{}\n", curve.noise_floor.mean));
    }
    let mut result = to_value(&curve);
    if let Value::Object(map) = &mut result {
        map.insert("fit_exponent".into(), to_value(&curve.fit_exponent()));
        map.insert(
            "fit_intercept".into(),
            to_value(&curve.fit.map(|f| f.intercept)),
        );
    }
    let mut out = Outcome::new(result);
    match start {
        StartSpec::Stationary { .. } => out.checks.push(Check::new(
            "at_noise_floor",
            curve.all_at_floor(),
            format!(
                "max tv {:.4}, floor threshold {:.4}",
                max(&curve.tv_estimates),
                curve.noise_floor.threshold
            ),
        )),
        StartSpec::Fixed { .. } => {
            out.checks.push(Check::new(
                "monotone",
                curve.monotone,
                "tv non-increasing within 4 sqrt(2) floor sd".to_string(),
            ));
            match curve.require_fit() {
                Ok(fit) => out.checks.push(Check::new(
                    "polynomial_decay",
                    fit.exponent <= -1.0,
                    format!(
                        "fitted exponent {:.3} over {} points",
                        fit.exponent, fit.points
                    ),
                )),
                Err(err) => {
                    eprintln!("error: {err}");
                    out.checks
                        .push(Check::new("polynomial_decay", false, err.to_string()));
                    out.hard_failure = Some(EXIT_GATE);
                }
            }
        }
    }
    out.table = Some(("curve.csv", csv));
    Ok(out)
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
