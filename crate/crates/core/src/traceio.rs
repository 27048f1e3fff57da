//! Trace workloads: CSV ingestion, synthetic generators, worker schedules and
//! compilation of a trace into a type-indexed system.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentTypeConfig, Regime, SystemConfig, TaskTypeConfig};
use crate::processes::{Domain, ProcessSpec, Rng};

pub const HEADER: [&str; 8] = [
    "task_id",
    "project_id",
    "realtime",
    "arrival_sec",
    "step_index",
    "skill",
    "duration_sec",
    "strict_order",
];

pub const DAY_SECONDS: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSubstep {
    pub skill: usize,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Sorted by skill.
    pub substeps: Vec<TraceSubstep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTask {
    pub task_id: u64,
    pub project_id: u64,
    pub realtime: bool,
    pub arrival_sec: f64,
    pub strict_order: bool,
    pub steps: Vec<TraceStep>,
}

impl TraceTask {
    pub fn skill_seconds(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for sub in self.steps.iter().flat_map(|s| &s.substeps) {
            *out.entry(sub.skill).or_insert(0.0) += sub.duration_sec;
        }
        out
    }
}

/// Tasks ordered by `(arrival_sec, task_id)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceWorkload {
    pub tasks: Vec<TraceTask>,
}

impl TraceWorkload {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    fn sort(&mut self) {
        self.tasks
            .sort_by(|a, b| a.arrival_sec.total_cmp(&b.arrival_sec).then(a.task_id.cmp(&b.task_id)));
    }

    pub fn num_skills(&self) -> usize {
        self.tasks
            .iter()
            .flat_map(|t| t.steps.iter().flat_map(|s| &s.substeps))
            .map(|s| s.skill + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    task_id: u64,
    project_id: u64,
    realtime: String,
    arrival_sec: f64,
    step_index: usize,
    skill: usize,
    duration_sec: f64,
    strict_order: String,
}

fn parse_flag(s: &str, line: u64, field: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Trace {
            line,
            msg: format!("{field} must be 0/1 or true/false, got `{other}`"),
        }),
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceWorkload> {
    read_trace(std::fs::File::open(path)?)
}

/// Parses the trace CSV. Line numbers in errors count the header as line 1.
pub fn read_trace(input: impl Read) -> Result<TraceWorkload> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Trace {
            line: 1,
            msg: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    struct Partial {
        task: TraceTask,
        line: u64,
        steps: BTreeMap<usize, BTreeMap<usize, f64>>,
    }
    let mut tasks: BTreeMap<u64, Partial> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Trace {
            line,
            msg: e.to_string(),
        })?;
        let row: Row = rec.deserialize(Some(&headers)).map_err(|e| Error::Trace {
            line,
            msg: e.to_string(),
        })?;
        if !(row.duration_sec.is_finite() && row.duration_sec > 0.0) {
            return Err(Error::Trace {
                line,
                msg: format!("duration must be positive, got {}", row.duration_sec),
            });
        }
        if !(row.arrival_sec.is_finite() && row.arrival_sec >= 0.0) {
            return Err(Error::Trace {
                line,
                msg: format!("arrival must be finite and >= 0, got {}", row.arrival_sec),
            });
        }
        let realtime = parse_flag(&row.realtime, line, "realtime")?;
        let strict_order = parse_flag(&row.strict_order, line, "strict_order")?;
        let entry = tasks.entry(row.task_id).or_insert_with(|| Partial {
            task: TraceTask {
                task_id: row.task_id,
                project_id: row.project_id,
                realtime,
                arrival_sec: row.arrival_sec,
                strict_order,
                steps: Vec::new(),
            },
            line,
            steps: BTreeMap::new(),
        });
        let t = &entry.task;
        if t.project_id != row.project_id
            || t.realtime != realtime
            || t.arrival_sec != row.arrival_sec
            || t.strict_order != strict_order
        {
            return Err(Error::Trace {
                line,
                msg: format!(
                    "task {} disagrees with its first row (line {}) on task-level fields",
                    row.task_id, entry.line
                ),
            });
        }
        let step = entry.steps.entry(row.step_index).or_default();
        if step.insert(row.skill, row.duration_sec).is_some() {
            return Err(Error::Trace {
                line,
                msg: format!(
                    "duplicate (task {}, step {}, skill {})",
                    row.task_id, row.step_index, row.skill
                ),
            });
        }
    }
    let mut out = TraceWorkload::default();
    for (_, p) in tasks {
        let mut task = p.task;
        for (expect, (k, subs)) in p.steps.into_iter().enumerate() {
            if k != expect {
                return Err(Error::Trace {
                    line: p.line,
                    msg: format!("task {} has no step {expect}", task.task_id),
                });
            }
            task.steps.push(TraceStep {
                substeps: subs
                    .into_iter()
                    .map(|(skill, duration_sec)| TraceSubstep { skill, duration_sec })
                    .collect(),
            });
        }
        out.tasks.push(task);
    }
    out.sort();
    Ok(out)
}

/// Canonical form: tasks by arrival then id, one row per substep in step and
/// skill order, flags as 0/1, shortest round-trip float formatting.
pub fn write_trace(w: &TraceWorkload, out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(HEADER)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for t in &w.tasks {
        for (k, step) in t.steps.iter().enumerate() {
            for sub in &step.substeps {
                writer.write_record([
                    t.task_id.to_string(),
                    t.project_id.to_string(),
                    flag(t.realtime).to_string(),
                    t.arrival_sec.to_string(),
                    k.to_string(),
                    sub.skill.to_string(),
                    sub.duration_sec.to_string(),
                    flag(t.strict_order).to_string(),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn save_trace(w: &TraceWorkload, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(w, file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Short,
    Long,
    Samahub,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(SyntheticKind::Short),
            "long" => Ok(SyntheticKind::Long),
            "samahub" => Ok(SyntheticKind::Samahub),
            other => Err(Error::Invalid(format!(
                "unknown trace kind `{other}`; available: short, long, samahub"
            ))),
        }
    }
}

impl SyntheticKind {
    /// Inclusive substep duration range in seconds.
    pub fn duration_range(self) -> (f64, f64) {
        match self {
            SyntheticKind::Short => (60.0, 600.0),
            SyntheticKind::Long => (600.0, 6000.0),
            SyntheticKind::Samahub => (60.0, 620.0),
        }
    }

    pub fn max_steps(self) -> usize {
        match self {
            SyntheticKind::Samahub => 2,
            _ => 3,
        }
    }
}

pub const SYNTHETIC_SKILLS: usize = 5;
const SAMAHUB_PROJECTS: u64 = 20;
const SAMAHUB_REALTIME: f64 = 0.45;

/// Poisson arrivals at `per_hour` over `days`, with uniform step counts,
/// substep counts and durations. Deterministic per seed.
pub fn gen_synthetic(kind: SyntheticKind, per_hour: f64, days: u64, seed: u64) -> Result<TraceWorkload> {
    if !(per_hour.is_finite() && per_hour > 0.0) {
        return Err(Error::Invalid(format!("load must be positive, got {per_hour}")));
    }
    if days == 0 {
        return Err(Error::Invalid("days must be at least 1".into()));
    }
    let rng = &mut Rng::new(seed).stream(Domain::TraceGen, 0, kind as u64);
    let gap = Exp::new(per_hour / 3600.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let end = days as f64 * DAY_SECONDS;
    let (lo, hi) = kind.duration_range();
    let skills: Vec<usize> = (0..SYNTHETIC_SKILLS).collect();
    let realtime_projects: Vec<bool> = (0..SAMAHUB_PROJECTS)
        .map(|_| rng.random_bool(SAMAHUB_REALTIME))
        .collect();
    let mut tasks = Vec::new();
    let mut clock = 0.0;
    loop {
        clock += gap.sample(rng);
        if clock >= end {
            break;
        }
        let n_steps = rng.random_range(1..=kind.max_steps());
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let chosen: Vec<usize> = match kind {
                SyntheticKind::Samahub => vec![0],
                _ => {
                    let n = rng.random_range(1..=3);
                    let mut c: Vec<usize> = skills.choose_multiple(rng, n).copied().collect();
                    c.sort_unstable();
                    c
                }
            };
            steps.push(TraceStep {
                substeps: chosen
                    .into_iter()
                    .map(|skill| TraceSubstep {
                        skill,
                        duration_sec: rng.random_range(lo..=hi),
                    })
                    .collect(),
            });
        }
        let (project_id, realtime, strict_order) = match kind {
            SyntheticKind::Samahub => {
                let p = rng.random_range(0..SAMAHUB_PROJECTS);
                (p, realtime_projects[p as usize], rng.random_bool(0.5))
            }
            _ => (0, false, true),
        };
        tasks.push(TraceTask {
            task_id: tasks.len() as u64,
            project_id,
            realtime,
            arrival_sec: clock,
            strict_order,
            steps,
        });
    }
    Ok(TraceWorkload { tasks })
}

/// Workers spread round-robin over time zones. Without `random_skills`
/// every worker holds all of `skills`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerPoolSpec {
    pub count: u64,
    /// UTC offsets in hours.
    pub offsets: Vec<f64>,
    /// Local working window `[start, end)` in hours.
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    pub skills: Vec<usize>,
    #[serde(default)]
    pub random_skills: Option<RandomSkills>,
}

/// Each worker draws a uniform number of skills in `1..=max` and then that
/// many distinct skills uniformly from the pool's skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSkills {
    pub max: usize,
    pub seed: u64,
}

fn default_window() -> (f64, f64) {
    (9.0, 17.0)
}

impl WorkerPoolSpec {
    /// The evaluation pool: workers over offsets -4, 0, 3 and 5.5.
    pub fn four_zones(count: u64, skills: Vec<usize>) -> Self {
        WorkerPoolSpec {
            count,
            offsets: vec![-4.0, 0.0, 3.0, 5.5],
            window: default_window(),
            skills,
            random_skills: None,
        }
    }

    /// Same pool with per-worker random skill sets.
    pub fn with_random_skills(mut self, max: usize, seed: u64) -> Self {
        self.random_skills = Some(RandomSkills { max, seed });
        self
    }

    /// Distinct skill sets with their worker count per offset.
    pub fn skill_groups(&self) -> Result<Vec<(Vec<usize>, Vec<u64>)>> {
        let Some(r) = self.random_skills else {
            return Ok(vec![(self.skills.clone(), self.per_offset())]);
        };
        if r.max == 0 || self.skills.is_empty() {
            return Err(Error::Invalid("random skills need max >= 1 and a nonempty skill list".into()));
        }
        let z = self.offsets.len().max(1);
        let rng = &mut Rng::new(r.seed).stream(Domain::WorkerSkills, 0, 0);
        let mut groups: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
        for i in 0..self.count as usize {
            let n = rng.random_range(1..=r.max.min(self.skills.len()));
            let mut set: Vec<usize> = self.skills.choose_multiple(rng, n).copied().collect();
            set.sort_unstable();
            groups.entry(set).or_insert_with(|| vec![0; z])[i % z] += 1;
        }
        Ok(groups.into_iter().collect())
    }

    /// Workers per offset, round-robin.
    pub fn per_offset(&self) -> Vec<u64> {
        let z = self.offsets.len() as u64;
        (0..z).map(|i| self.count / z + u64::from(i < self.count % z)).collect()
    }
}

/// Available workers per epoch, one column per time zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSchedule {
    pub offsets: Vec<f64>,
    /// `counts[t - 1][zone]`.
    pub counts: Vec<Vec<u64>>,
}

impl WorkerSchedule {
    /// One cyclic trace process per zone.
    pub fn processes(&self) -> Vec<ProcessSpec> {
        (0..self.offsets.len())
            .map(|z| ProcessSpec::Trace {
                values: self.counts.iter().map(|row| row[z]).collect(),
                cyclic: true,
            })
            .collect()
    }
}

fn in_window(local: f64, (start, end): (f64, f64)) -> bool {
    if start < end {
        (start..end).contains(&local)
    } else {
        local >= start || local < end
    }
}

/// A worker counts as available in an epoch when the epoch midpoint falls
/// inside its local window.
pub fn build_worker_schedule(pool: &WorkerPoolSpec, epoch_seconds: f64, horizon: u64) -> Result<WorkerSchedule> {
    let (start, end) = pool.window;
    if !(0.0..=24.0).contains(&start) || !(0.0..=24.0).contains(&end) || start == end {
        return Err(Error::Invalid(format!("invalid window [{start}, {end})")));
    }
    if pool.count > 0 && pool.offsets.is_empty() {
        return Err(Error::Invalid("worker pool needs at least one offset".into()));
    }
    let per_day = DAY_SECONDS / epoch_seconds;
    if !(epoch_seconds > 0.0 && (per_day - per_day.round()).abs() < 1e-9) {
        return Err(Error::Invalid(format!(
            "epoch of {epoch_seconds} s does not divide a day"
        )));
    }
    let per_offset = pool.per_offset();
    let counts = (1..=horizon)
        .map(|t| {
            let mid = ((t as f64 - 0.5) * epoch_seconds / 3600.0).rem_euclid(24.0);
            pool.offsets
                .iter()
                .zip(&per_offset)
                .map(|(&off, &n)| {
                    if in_window((mid + off).rem_euclid(24.0), pool.window) {
                        n
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    Ok(WorkerSchedule {
        offsets: pool.offsets.clone(),
        counts,
    })
}

/// How a trace becomes a type-indexed system.
#[derive(Debug, Clone, PartialEq)]
pub struct CompileOptions {
    pub epoch_seconds: f64,
    /// Durations are grouped on this grid (seconds); exact grouping when `None`.
    pub grid_sec: Option<f64>,
    pub regime: Regime,
    pub horizon: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledTrace {
    pub config: SystemConfig,
    /// Task type of every trace task, in workload order.
    pub type_of: Vec<usize>,
    /// Tasks per type.
    pub members: Vec<u64>,
}

type StructureKey = Vec<Vec<(usize, i64)>>;

fn structure_key(task: &TraceTask, grid: Option<f64>) -> StructureKey {
    task.steps
        .iter()
        .map(|s| {
            s.substeps
                .iter()
                .map(|sub| {
                    let q = match grid {
                        Some(g) => (sub.duration_sec / g).round().max(1.0) as i64,
                        None => sub.duration_sec.to_bits() as i64,
                    };
                    (sub.skill, q)
                })
                .collect()
        })
        .collect()
}

/// Groups tasks with the same step structure into task types whose hours are
/// the group means, so total skill-hours are preserved. Hours are measured in
/// epochs. Steps form a chain in trace order. Arrivals replay per epoch;
/// agents come from the pool, one type per skill set and time zone, each
/// working the full epoch.
pub fn compile_trace(w: &TraceWorkload, pool: &WorkerPoolSpec, opts: &CompileOptions) -> Result<CompiledTrace> {
    if let Some(g) = opts.grid_sec {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::Invalid(format!("grid must be positive, got {g}")));
        }
    }
    let mut index: BTreeMap<StructureKey, usize> = BTreeMap::new();
    let mut sums: Vec<Vec<BTreeMap<usize, f64>>> = Vec::new();
    let mut members: Vec<u64> = Vec::new();
    let mut type_of = Vec::with_capacity(w.len());
    let mut arrivals: Vec<BTreeMap<u64, u64>> = Vec::new();
    for task in &w.tasks {
        let key = structure_key(task, opts.grid_sec);
        let next = index.len();
        let j = *index.entry(key).or_insert(next);
        if j == sums.len() {
            sums.push(vec![BTreeMap::new(); task.steps.len()]);
            members.push(0);
            arrivals.push(BTreeMap::new());
        }
        for (k, s) in task.steps.iter().enumerate() {
            for sub in &s.substeps {
                *sums[j][k].entry(sub.skill).or_insert(0.0) += sub.duration_sec;
            }
        }
        members[j] += 1;
        type_of.push(j);
        let epoch = (task.arrival_sec / opts.epoch_seconds).floor() as u64 + 1;
        *arrivals[j].entry(epoch).or_insert(0) += 1;
    }
    let horizon = opts.horizon;
    let task_types = sums
        .iter()
        .zip(&members)
        .zip(&arrivals)
        .map(|((steps, &n), arr)| {
            let mut values = vec![0u64; horizon as usize];
            for (&e, &c) in arr {
                if e <= horizon {
                    values[e as usize - 1] += c;
                }
            }
            TaskTypeConfig {
                steps: steps
                    .iter()
                    .map(|m| m.iter().map(|(&s, &secs)| (s, secs / n as f64 / opts.epoch_seconds)).collect())
                    .collect(),
                parent: None,
                rate: None,
                arrivals: Some(ProcessSpec::Trace { values, cyclic: false }),
            }
        })
        .collect();
    let schedule = build_worker_schedule(pool, opts.epoch_seconds, horizon)?;
    let flexible = opts.regime.flexible_agents();
    let universal = pool.random_skills.is_none();
    let mut agent_types = Vec::new();
    for (set, per_zone) in pool.skill_groups()? {
        for (z, &n) in per_zone.iter().enumerate() {
            if n == 0 && !universal {
                continue;
            }
            let values = schedule
                .counts
                .iter()
                .map(|row| if row[z] > 0 { n } else { 0 })
                .collect();
            agent_types.push(AgentTypeConfig {
                skills: set.clone(),
                hours: flexible.then_some(1.0),
                skill_hours: (!flexible).then(|| {
                    let share = 1.0 / set.len().max(1) as f64;
                    set.iter().map(|&s| (s, share)).collect()
                }),
                availability: Some(ProcessSpec::Trace { values, cyclic: true }),
            });
        }
    }
    let skills = w
        .num_skills()
        .max(pool.skills.iter().map(|s| s + 1).max().unwrap_or(0));
    Ok(CompiledTrace {
        config: SystemConfig {
            skills,
            regime: opts.regime,
            agent_types,
            task_types,
        },
        type_of,
        members,
    })
}

/// Total work per skill of a workload, in seconds.
pub fn workload_skill_seconds(w: &TraceWorkload) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for t in &w.tasks {
        for (s, secs) in t.skill_seconds() {
            *out.entry(s).or_insert(0.0) += secs;
        }
    }
    out
}

/// Work per skill carried by a compiled config, weighting each type by its
/// member count, in seconds.
pub fn compiled_skill_seconds(c: &CompiledTrace, epoch_seconds: f64) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for (tt, &n) in c.config.task_types.iter().zip(&c.members) {
        for step in &tt.steps {
            for (&s, &h) in step {
                *out.entry(s).or_insert(0.0) += h * n as f64 * epoch_seconds;
            }
        }
    }
    out
}

/// Distinct skills of a workload, for building a universal pool.
pub fn workload_skills(w: &TraceWorkload) -> BTreeSet<usize> {
    w.tasks
        .iter()
        .flat_map(|t| t.steps.iter().flat_map(|s| s.substeps.iter().map(|x| x.skill)))
        .collect()
}
