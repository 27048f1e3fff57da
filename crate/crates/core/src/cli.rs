//! Command-line front end: `simulate`, `capacity`, `compare` and `gen-trace`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::capacity::{boundary_scalar, capacity_member, outer_bound_check};
use crate::error::{Error, Result};
use crate::model::{validate_config, Regime, SystemConfig, ValidatedSystem};
use crate::policies_greedy::GammaSchedule;
use crate::policy::{PolicyKind, PolicyParams};
use crate::processes::{GammaTable, ProcessSpec};
use crate::sim::{run_matrix, Cell, MetricsReport, RunConfig, Verdict};
use crate::traceio::{
    compile_trace, gen_synthetic, load_trace, save_trace, workload_skills, CompileOptions, SyntheticKind,
    TraceWorkload, WorkerPoolSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTRACTABLE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::UnsupportedRegime { .. }
        | Error::Trace { .. }
        | Error::Invalid(_)
        | Error::Json(_) => EXIT_USAGE,
        Error::Intractable(_) => EXIT_INTRACTABLE,
        Error::InfeasibleAllocation(_) | Error::NoCompletions | Error::Io(_) | Error::Csv(_) => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "crowdalloc", version, about = "Skill-based crowdsourcing allocation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one policy over every (load, seed) cell.
    Simulate(RunArgs),
    /// Capacity-region membership of a rate vector, or the boundary along a ray.
    Capacity(CapacityArgs),
    /// Simulate several policies on the same cells and tabulate them side by side.
    Compare(RunArgs),
    /// Write a synthetic trace CSV.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// System config (JSON).
    #[arg(long, conflicts_with_all = ["trace", "synthetic"])]
    pub config: Option<PathBuf>,
    /// Trace CSV, compiled into a system with the worker pool below.
    #[arg(long, conflicts_with = "synthetic")]
    pub trace: Option<PathBuf>,
    /// Generate a synthetic trace instead: short, long or samahub.
    #[arg(long)]
    pub synthetic: Option<SyntheticKind>,
    /// Tasks per hour of the synthetic trace.
    #[arg(long, default_value_t = 150.0)]
    pub trace_load: f64,
    /// Days covered by the synthetic trace.
    #[arg(long, default_value_t = 1)]
    pub days: u64,
    /// Policy name; comma-separated list for `compare`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub policy: Vec<PolicyKind>,
    /// Regime override (IF, FF, FI, II). Defaults to the policy's own regime,
    /// else the config's.
    #[arg(long)]
    pub regime: Option<Regime>,
    /// Epochs to simulate. Trace runs default to the trace span.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Seeds, comma-separated.
    #[arg(long = "seeds", alias = "seed", value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Multipliers on the configured arrival rates, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "alpha")]
    pub load: Vec<f64>,
    /// Loads as fractions of the capacity boundary along the configured
    /// rate vector, comma-separated. Needs a tractable capacity oracle.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Slack of the flexible greedy tagging LP.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    /// Averaging schedule of the flexible greedy policy: `harmonic` or an exponent in (0, 1].
    #[arg(long, default_value = "harmonic")]
    pub gamma: GammaSchedule,
    /// Seconds per epoch. Trace workers work whole epochs.
    #[arg(long, default_value_t = 3600.0)]
    pub epoch_seconds: f64,
    /// Workers of a trace run, spread over offsets -4, 0, 3 and 5.5.
    #[arg(long, default_value_t = 50)]
    pub workers: u64,
    /// Give each trace worker a random set of 1 to N skills instead of every skill.
    #[arg(long, value_name = "N")]
    pub worker_skills: Option<usize>,
    /// Duration grid (seconds) for grouping trace tasks into types; 0 groups exactly.
    #[arg(long, default_value_t = 60.0)]
    pub grid: f64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CapacityArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Arrival rate per task type, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "ray", required_unless_present = "ray")]
    pub lambda: Vec<f64>,
    /// Direction of the boundary search, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub ray: Vec<f64>,
    /// Regime override.
    #[arg(long)]
    pub regime: Option<Regime>,
}

#[derive(Debug, Clone, Args)]
pub struct GenTraceArgs {
    /// short, long or samahub.
    #[arg(long)]
    pub kind: SyntheticKind,
    /// Tasks per hour.
    #[arg(long, default_value_t = 150.0)]
    pub load: f64,
    #[arg(long, default_value_t = 1)]
    pub days: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to stderr, results to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            if !out.is_empty() {
                // a closed pipe downstream is not our failure
                let _ = writeln!(std::io::stdout(), "{out}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command, returning what it prints.
pub fn execute(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Simulate(a) => {
            if a.policy.len() != 1 {
                return Err(Error::Invalid("simulate takes one policy; use compare for several".into()));
            }
            let rows = cmd_simulate(a)?;
            Ok(serde_json::to_string_pretty(&rows)?)
        }
        Command::Compare(a) => {
            let rows = cmd_compare(a)?;
            Ok(serde_json::to_string_pretty(&rows)?)
        }
        Command::Capacity(a) => Ok(serde_json::to_string_pretty(&cmd_capacity(a)?)?),
        Command::GenTrace(a) => {
            let w = gen_synthetic(a.kind, a.load, a.days, a.seed)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_trace(&w, &a.out)?;
            Ok(format!("wrote {} tasks to {}", w.len(), a.out.display()))
        }
    }
}

fn load_system(path: &Path, regime: Option<Regime>) -> Result<(SystemConfig, ValidatedSystem)> {
    let mut cfg = SystemConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::config(path.display().to_string(), io.to_string()),
        other => other,
    })?;
    if let Some(r) = regime {
        cfg.regime = r;
    }
    let sys = validate_config(&cfg)?;
    Ok((cfg, sys))
}

fn gamma_of(cfg: &SystemConfig) -> Result<GammaTable> {
    GammaTable::from_specs(&cfg.availability_specs()).map_err(Error::Invalid)
}

pub fn cmd_capacity(a: &CapacityArgs) -> Result<serde_json::Value> {
    let (cfg, sys) = load_system(&a.config, a.regime)?;
    let gamma = gamma_of(&cfg)?;
    let n = sys.num_task_types();
    if !a.ray.is_empty() {
        if a.ray.len() != n {
            return Err(Error::Invalid(format!("ray needs {n} entries, got {}", a.ray.len())));
        }
        let c = boundary_scalar(&a.ray, &gamma, &sys, 1e-6)?;
        return Ok(json!({ "ray": a.ray, "boundary": c }));
    }
    if a.lambda.len() != n {
        return Err(Error::Invalid(format!("lambda needs {n} entries, got {}", a.lambda.len())));
    }
    let verdict = capacity_member(&a.lambda, &gamma, &sys)?;
    let outer = outer_bound_check(&a.lambda, &gamma.mean(sys.num_agent_types()), &sys);
    Ok(json!({ "lambda": a.lambda, "verdict": verdict, "outer_bound": outer }))
}

/// A system with its arrival and availability processes, before load scaling.
struct Workload {
    cfg: SystemConfig,
    horizon: Option<u64>,
}

fn trace_workload(a: &RunArgs, regime: Regime) -> Result<Workload> {
    let w: TraceWorkload = match (&a.trace, a.synthetic) {
        (Some(p), _) => load_trace(p)?,
        (None, Some(kind)) => gen_synthetic(kind, a.trace_load, a.days, a.seeds[0])?,
        (None, None) => unreachable!("checked by caller"),
    };
    let span = w.tasks.last().map_or(0.0, |t| t.arrival_sec);
    let horizon = a
        .horizon
        .unwrap_or(((span / a.epoch_seconds).floor() as u64 + 1).max(1));
    let mut pool = WorkerPoolSpec::four_zones(a.workers, workload_skills(&w).into_iter().collect());
    if let Some(n) = a.worker_skills {
        pool = pool.with_random_skills(n, a.seeds[0]);
    }
    let compiled = compile_trace(
        &w,
        &pool,
        &CompileOptions {
            epoch_seconds: a.epoch_seconds,
            grid_sec: (a.grid > 0.0).then_some(a.grid),
            regime,
            horizon,
        },
    )?;
    Ok(Workload {
        cfg: compiled.config,
        horizon: Some(horizon),
    })
}

fn regime_for(kind: PolicyKind, a: &RunArgs, config_regime: Option<Regime>) -> Result<Regime> {
    let regime = a
        .regime
        .or(kind.regime())
        .or(config_regime)
        .unwrap_or(Regime::FF);
    if !kind.supports(regime) {
        return Err(Error::UnsupportedRegime {
            policy: kind.name().into(),
            required: kind.regime().map_or("any".into(), |r| r.to_string()),
            actual: regime,
        });
    }
    Ok(regime)
}

/// Summary of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub policy: String,
    pub regime: String,
    pub load: f64,
    pub seed: u64,
    pub mean_tat: Option<f64>,
    pub mean_backlog: f64,
    pub utilization: f64,
    pub verdict: Verdict,
    pub slope: f64,
}

impl SummaryRow {
    fn new(label: &str, load: f64, r: &MetricsReport) -> Self {
        SummaryRow {
            label: label.into(),
            policy: r.policy.clone(),
            regime: r.regime.to_string(),
            load,
            seed: r.seed,
            mean_tat: r.mean_tat,
            mean_backlog: r.mean_backlog,
            utilization: r.mean_utilization,
            verdict: r.stability.verdict,
            slope: r.stability.slope,
        }
    }
}

fn build_cells(a: &RunArgs) -> Result<Vec<(Cell, f64)>> {
    if a.seeds.is_empty() {
        return Err(Error::Invalid("at least one seed is required".into()));
    }
    if a.config.is_none() && a.trace.is_none() && a.synthetic.is_none() {
        return Err(Error::Invalid("one of --config, --trace or --synthetic is required".into()));
    }
    let params = PolicyParams {
        epsilon: a.epsilon,
        gamma: a.gamma,
    };
    let base = match &a.config {
        Some(p) => Some(load_system(p, None)?.0),
        None => None,
    };
    let mut cells = Vec::new();
    for &kind in &a.policy {
        let regime = regime_for(kind, a, base.as_ref().map(|c| c.regime))?;
        let wl = match &base {
            Some(cfg) => {
                let mut cfg = cfg.clone();
                cfg.regime = regime;
                Workload { cfg, horizon: None }
            }
            None => trace_workload(a, regime)?,
        };
        let sys = validate_config(&wl.cfg)?;
        let horizon = a.horizon.or(wl.horizon).unwrap_or(1000);
        let arrivals = wl.cfg.arrival_specs();
        let loads: Vec<(f64, f64)> = if !a.alpha.is_empty() {
            let gamma = gamma_of(&wl.cfg)?;
            let ray: Vec<f64> = arrivals.iter().map(ProcessSpec::mean).collect();
            let c = boundary_scalar(&ray, &gamma, &sys, 1e-6)?;
            a.alpha.iter().map(|&x| (x, x * c)).collect()
        } else if a.load.is_empty() {
            vec![(1.0, 1.0)]
        } else {
            a.load.iter().map(|&x| (x, x)).collect()
        };
        for &(label_load, factor) in &loads {
            let scaled = arrivals
                .iter()
                .map(|s| s.scaled(factor))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(Error::Invalid)?;
            for &seed in &a.seeds {
                let mut config = RunConfig::new(horizon, seed);
                config.epoch_seconds = a.epoch_seconds;
                cells.push((
                    Cell {
                        label: format!("{}_{}_load{}_seed{}", kind.name(), regime, label_load, seed),
                        sys: sys.clone(),
                        policy: kind,
                        params,
                        arrivals: scaled.clone(),
                        availability: wl.cfg.availability_specs(),
                        config,
                    },
                    label_load,
                ));
            }
        }
    }
    Ok(cells)
}

fn execute_cells(a: &RunArgs) -> Result<Vec<SummaryRow>> {
    let cells = build_cells(a)?;
    let plain: Vec<Cell> = cells.iter().map(|(c, _)| c.clone()).collect();
    let results = run_matrix(&plain, a.jobs)?;
    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::with_capacity(cells.len());
    for ((cell, load), res) in cells.iter().zip(results) {
        let report = res?;
        report.write_files(&a.out, &cell.label)?;
        rows.push(SummaryRow::new(&cell.label, *load, &report));
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(rows: &[T], dir: &Path, stem: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

/// Reads back a `summary.csv` or `comparison.csv`.
pub fn read_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn cmd_simulate(a: &RunArgs) -> Result<Vec<SummaryRow>> {
    let rows = execute_cells(a)?;
    write_rows(&rows, &a.out, "summary")?;
    Ok(rows)
}

/// Seed-averaged metrics of one (load, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub load: f64,
    pub policy: String,
    pub regime: String,
    pub seeds: usize,
    pub mean_tat: Option<f64>,
    pub mean_backlog: f64,
    pub utilization: f64,
    pub stable: usize,
    pub unstable: usize,
}

pub fn cmd_compare(a: &RunArgs) -> Result<Vec<ComparisonRow>> {
    if a.policy.len() < 2 {
        return Err(Error::Invalid("compare needs at least two policies".into()));
    }
    let rows = execute_cells(a)?;
    write_rows(&rows, &a.out, "summary")?;
    // one group per (load, policy position), in input order
    let mut groups: BTreeMap<(usize, usize), Vec<&SummaryRow>> = BTreeMap::new();
    let per_policy = rows.len() / a.policy.len();
    let per_load = per_policy / a.seeds.len().max(1);
    for (i, r) in rows.iter().enumerate() {
        let p = i / per_policy;
        let l = (i % per_policy) / a.seeds.len().max(1);
        debug_assert!(l < per_load);
        groups.entry((l, p)).or_default().push(r);
    }
    let table: Vec<ComparisonRow> = groups
        .into_values()
        .map(|g| {
            let n = g.len() as f64;
            let tats: Vec<f64> = g.iter().filter_map(|r| r.mean_tat).collect();
            ComparisonRow {
                load: g[0].load,
                policy: g[0].policy.clone(),
                regime: g[0].regime.clone(),
                seeds: g.len(),
                mean_tat: (!tats.is_empty()).then(|| tats.iter().sum::<f64>() / tats.len() as f64),
                mean_backlog: g.iter().map(|r| r.mean_backlog).sum::<f64>() / n,
                utilization: g.iter().map(|r| r.utilization).sum::<f64>() / n,
                stable: g.iter().filter(|r| r.verdict == Verdict::Stable).count(),
                unstable: g.iter().filter(|r| r.verdict == Verdict::Unstable).count(),
            }
        })
        .collect();
    write_rows(&table, &a.out, "comparison")?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1_config;

    fn write_t1(dir: &Path) -> PathBuf {
        let p = dir.join("t1.json");
        std::fs::write(&p, serde_json::to_string(&t1_config()).unwrap()).unwrap();
        p
    }

    fn args(v: &[&str]) -> Vec<String> {
        std::iter::once("crowdalloc").chain(v.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn simulate_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_t1(dir.path());
        let out = dir.path().join("out");
        let code = main_with_args(args(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "centralized-exact",
            "--horizon",
            "300",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        assert!(out.join("summary.csv").exists());
        let json = std::fs::read_to_string(out.join("centralized-exact_IF_load1_seed7.json")).unwrap();
        let r: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(r.horizon, 300);
    }

    #[test]
    fn unknown_policy_is_usage_error() {
        let code = main_with_args(args(&["simulate", "--config", "x.json", "--policy", "nope"]));
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn regime_gate_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_t1(dir.path());
        let cli = Cli::try_parse_from(args(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "algo3",
            "--regime",
            "FF",
        ]))
        .unwrap();
        let e = execute(&cli.command).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        assert!(e.to_string().contains("requires regime FI"), "{e}");
    }

    #[test]
    fn capacity_ray_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_t1(dir.path());
        let v = cmd_capacity(&CapacityArgs {
            config: cfg.clone(),
            lambda: vec![],
            ray: vec![1.0],
            regime: None,
        })
        .unwrap();
        assert!((v["boundary"].as_f64().unwrap() - 2.0).abs() <= 1e-6);
        let v = cmd_capacity(&CapacityArgs {
            config: cfg,
            lambda: vec![0.0],
            ray: vec![],
            regime: None,
        })
        .unwrap();
        assert_eq!(v["verdict"]["status"], "inside");
    }

    #[test]
    fn oversized_capacity_is_intractable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = t1_config();
        for a in &mut cfg.agent_types {
            a.availability = Some(ProcessSpec::Deterministic { value: 3000 });
        }
        let p = dir.path().join("big.json");
        std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
        let code = main_with_args(args(&["capacity", "--config", p.to_str().unwrap(), "--lambda", "1"]));
        assert_eq!(code, EXIT_INTRACTABLE);
    }

    #[test]
    fn compare_duplicates_match() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_t1(dir.path());
        let a = RunArgs {
            config: Some(cfg),
            trace: None,
            synthetic: None,
            trace_load: 150.0,
            days: 1,
            policy: vec![PolicyKind::Exact, PolicyKind::Exact],
            regime: None,
            horizon: Some(200),
            seeds: vec![3],
            load: vec![],
            alpha: vec![],
            epsilon: 0.05,
            gamma: GammaSchedule::Harmonic,
            epoch_seconds: 3600.0,
            workers: 50,
            worker_skills: None,
            grid: 60.0,
            jobs: 2,
            out: dir.path().join("cmp"),
        };
        let rows = cmd_compare(&a).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rows[1]);
    }
}
