//! Discrete-time engine: queue dynamics, policy invocation, metrics and the
//! stability diagnostic.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::{check_against_queue, check_allocation, Allocation, Assignment, Availability};
use crate::error::{Error, Result};
use crate::model::{Regime, ValidatedSystem};
use crate::policy::{EpochContext, Policy, PolicyKind, PolicyParams};
use crate::processes::{sample_arrivals, sample_availability, ProcessSpec, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    task_id: u64,
    released: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TaskRecord {
    task_type: usize,
    arrival: u64,
    outstanding: usize,
}

/// A task whose last step was allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub task_id: u64,
    pub task_type: usize,
    pub arrival: u64,
    pub finished: u64,
    /// Epochs from first allocatable to last allocation, inclusive.
    pub tat: u64,
}

/// One step instance taken off its queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Served {
    pub task_id: u64,
    pub flat: usize,
    pub ordinal: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpochOutcome {
    pub served: Vec<Served>,
    pub completions: Vec<Completion>,
    /// Ids of tasks admitted for the next epoch.
    pub admitted: Vec<(u64, usize)>,
}

/// FIFO queue of released, unallocated step instances per step type, plus
/// the live task records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueState {
    queues: Vec<VecDeque<Pending>>,
    counts: Vec<u64>,
    tasks: BTreeMap<u64, TaskRecord>,
    next_id: u64,
}

impl QueueState {
    pub fn new(sys: &ValidatedSystem) -> Self {
        QueueState {
            queues: vec![VecDeque::new(); sys.num_step_types()],
            counts: vec![0; sys.num_step_types()],
            tasks: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Queues `counts[flat]` instances of each step type, all released at
    /// epoch 1, each belonging to its own task that still owes this step's
    /// subtree.
    pub fn from_counts(sys: &ValidatedSystem, counts: &[u64]) -> Self {
        let mut q = QueueState::new(sys);
        for (flat, &c) in counts.iter().enumerate() {
            let r = sys.step_ref(flat);
            let tree = &sys.task_types()[r.task].tree;
            let subtree = subtree_size(tree, r.step);
            for _ in 0..c {
                let id = q.new_task(r.task, 1, subtree);
                q.push(flat, id, 1);
            }
        }
        q
    }

    fn new_task(&mut self, task_type: usize, arrival: u64, outstanding: usize) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tasks.insert(
            id,
            TaskRecord {
                task_type,
                arrival,
                outstanding,
            },
        );
        id
    }

    fn push(&mut self, flat: usize, task_id: u64, released: u64) {
        self.queues[flat].push_back(Pending { task_id, released });
        self.counts[flat] += 1;
    }

    /// `Q_{j,k}`, flat-indexed.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Release epochs of the queued instances of `flat`, oldest first.
    pub fn releases(&self, flat: usize) -> impl Iterator<Item = u64> + '_ {
        self.queues[flat].iter().map(|p| p.released)
    }

    /// Total unallocated steps.
    pub fn backlog(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn live_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Live tasks per task type.
    pub fn live_by_type(&self, num_types: usize) -> Vec<u64> {
        let mut v = vec![0; num_types];
        for t in self.tasks.values() {
            v[t.task_type] += 1;
        }
        v
    }

    /// Admits external arrivals at epoch `t`: their root steps become
    /// allocatable at `t`.
    pub fn admit(&mut self, sys: &ValidatedSystem, arrivals: &[u64], t: u64) -> Vec<(u64, usize)> {
        let mut ids = Vec::new();
        for (j, &a) in arrivals.iter().enumerate() {
            let task = &sys.task_types()[j];
            let root = sys.flat(j, task.tree.root());
            for _ in 0..a {
                let id = self.new_task(j, t, task.steps.len());
                self.push(root, id, t);
                ids.push((id, j));
            }
        }
        ids
    }

    /// Completes the allocation of epoch `t`, releases children into epoch
    /// `t + 1`, then admits the external arrivals of `t + 1`.
    pub fn advance(
        &mut self,
        sys: &ValidatedSystem,
        alloc: &Allocation,
        t: u64,
        external: &[u64],
    ) -> Result<EpochOutcome> {
        for (flat, (&s, &q)) in alloc.counts.iter().zip(&self.counts).enumerate() {
            if s > q {
                return Err(Error::InfeasibleAllocation(format!(
                    "step {:?}: {s} allocated but only {q} queued",
                    sys.step_ref(flat)
                )));
            }
        }
        let mut out = EpochOutcome::default();
        for (flat, &s) in alloc.counts.iter().enumerate() {
            for ordinal in 0..s {
                let p = self.queues[flat].pop_front().expect("count checked");
                out.served.push(Served {
                    task_id: p.task_id,
                    flat,
                    ordinal,
                });
            }
            self.counts[flat] -= s;
        }
        for sv in &out.served {
            let r = sys.step_ref(sv.flat);
            let rec = self.tasks.get_mut(&sv.task_id).expect("live task");
            rec.outstanding -= 1;
            let (arrival, task_type, done) = (rec.arrival, rec.task_type, rec.outstanding == 0);
            for &child in sys.task_types()[r.task].tree.children(r.step) {
                self.push(sys.flat(r.task, child), sv.task_id, t + 1);
            }
            if done {
                self.tasks.remove(&sv.task_id);
                out.completions.push(Completion {
                    task_id: sv.task_id,
                    task_type,
                    arrival,
                    finished: t,
                    tat: t + 1 - arrival,
                });
            }
        }
        out.admitted = self.admit(sys, external, t + 1);
        Ok(out)
    }
}

fn subtree_size(tree: &crate::model::PrecedenceTree, k: usize) -> usize {
    1 + tree
        .children(k)
        .iter()
        .map(|&c| subtree_size(tree, c))
        .sum::<usize>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// Backlog growth per epoch over the last half, per unit arrival volume.
    pub slope: f64,
}

/// Shortest trajectory the diagnostic will judge.
pub const MIN_TRAJECTORY: usize = 200;
pub const STABLE_SLOPE: f64 = 0.01;
pub const UNSTABLE_SLOPE: f64 = 0.1;

/// Least-squares slope of the last half of `backlog`, divided by the mean
/// arrivals per epoch (when positive).
pub fn stability_diagnostic(backlog: &[f64], arrival_volume: f64) -> StabilityReport {
    let half = &backlog[backlog.len() / 2..];
    let n = half.len() as f64;
    let slope = if half.len() < 2 {
        0.0
    } else {
        let mx = (n - 1.0) / 2.0;
        let my = half.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, &y) in half.iter().enumerate() {
            let dx = i as f64 - mx;
            sxy += dx * (y - my);
            sxx += dx * dx;
        }
        sxy / sxx
    };
    let slope = if arrival_volume > 0.0 {
        slope / arrival_volume
    } else {
        slope
    };
    let verdict = if backlog.len() < MIN_TRAJECTORY {
        Verdict::Inconclusive
    } else if slope < STABLE_SLOPE {
        Verdict::Stable
    } else if slope > UNSTABLE_SLOPE {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    StabilityReport { verdict, slope }
}

/// Per-run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub regime: Regime,
    pub seed: u64,
    pub horizon: u64,
    pub epoch_seconds: f64,
    pub arrived: Vec<u64>,
    pub completed: Vec<u64>,
    pub live_at_end: Vec<u64>,
    /// Turn-around time of each completed task, in epochs.
    pub tat: Vec<u64>,
    /// Unallocated steps left after each epoch's allocation.
    pub backlog: Vec<u64>,
    /// Allocated over offered hours per epoch (0 when nothing is offered).
    pub utilization: Vec<f64>,
    pub allocated_hours: f64,
    pub offered_hours: f64,
    pub mean_tat: Option<f64>,
    pub mean_backlog: f64,
    /// Overall allocated over offered hours.
    pub mean_utilization: f64,
    pub stability: StabilityReport,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mean backlog over the last half of the run.
    pub fn steady_backlog(&self) -> f64 {
        let half = &self.backlog[self.backlog.len() / 2..];
        if half.is_empty() {
            0.0
        } else {
            half.iter().sum::<u64>() as f64 / half.len() as f64
        }
    }

    /// Writes `<prefix>.json`, `<prefix>_trajectory.csv` and `<prefix>_tat.csv`.
    pub fn write_files(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{prefix}.json")), self.to_json()?)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_trajectory.csv")))?;
        w.write_record(["epoch", "backlog", "utilization"])?;
        for (i, (b, u)) in self.backlog.iter().zip(&self.utilization).enumerate() {
            w.write_record([(i + 1).to_string(), b.to_string(), u.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_tat.csv")))?;
        w.write_record(["tat_epochs", "tat_seconds"])?;
        for &x in &self.tat {
            w.write_record([x.to_string(), (x as f64 * self.epoch_seconds).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical CDF of the TAT samples: `(value, fraction <= value)` per
/// distinct value.
pub fn tat_cdf(report: &MetricsReport) -> Result<Vec<(u64, f64)>> {
    empirical_cdf(&report.tat)
}

pub fn empirical_cdf(samples: &[u64]) -> Result<Vec<(u64, f64)>> {
    if samples.is_empty() {
        return Err(Error::NoCompletions);
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut out: Vec<(u64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// One line of the JSON-lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Arrival {
        epoch: u64,
        task_id: u64,
        task_type: usize,
    },
    Allocation {
        epoch: u64,
        task_id: u64,
        task: usize,
        step: usize,
        assignments: Vec<Assignment>,
    },
    Completion {
        epoch: u64,
        task_id: u64,
        task_type: usize,
        tat: u64,
    },
}

/// Settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: u64,
    pub seed: u64,
    pub epoch_seconds: f64,
    /// Check every allocation's witness; on by default in debug builds.
    pub check: bool,
}

impl RunConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        RunConfig {
            horizon,
            seed,
            epoch_seconds: 3600.0,
            check: cfg!(debug_assertions),
        }
    }
}

/// Logs one warning listing the skill sets of step types no agent type can
/// serve whole, when the regime needs that.
pub fn warn_unserviceable(sys: &ValidatedSystem) {
    if sys.regime().flexible_steps() {
        return;
    }
    let stuck: Vec<usize> = (0..sys.num_step_types()).filter(|&f| !sys.step_coverable(f)).collect();
    if stuck.is_empty() {
        return;
    }
    let mut sets: Vec<Vec<usize>> = stuck.iter().map(|&f| sys.step(f).skills().to_vec()).collect();
    sets.sort();
    sets.dedup();
    log::warn!(
        "{} step types (first {:?}) need skill sets no single agent type has and will never be served: {:?}",
        stuck.len(),
        sys.step_ref(stuck[0]),
        sets
    );
}

/// Runs `policy` for `cfg.horizon` epochs: sample, allocate, check, advance.
pub fn run(
    sys: &ValidatedSystem,
    policy: &mut Policy,
    arrivals: &[ProcessSpec],
    availability: &[ProcessSpec],
    cfg: &RunConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<MetricsReport> {
    if cfg.horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    if arrivals.len() != sys.num_task_types() || availability.len() != sys.num_agent_types() {
        return Err(Error::Invalid(format!(
            "need {} arrival and {} availability processes, got {} and {}",
            sys.num_task_types(),
            sys.num_agent_types(),
            arrivals.len(),
            availability.len()
        )));
    }
    warn_unserviceable(sys);
    let rng = Rng::new(cfg.seed);
    let n = sys.num_task_types();
    let mut state = QueueState::new(sys);
    let mut arrived = vec![0u64; n];
    let mut completed = vec![0u64; n];
    let mut tat = Vec::new();
    let mut backlog = Vec::with_capacity(cfg.horizon as usize);
    let mut utilization = Vec::with_capacity(cfg.horizon as usize);
    let (mut alloc_hours, mut offer_hours) = (0.0, 0.0);

    let mut a_t = sample_arrivals(arrivals, &rng, 1);
    let admitted = state.admit(sys, &a_t, 1);
    log_arrivals(&mut log, 1, &admitted)?;
    for (j, &a) in a_t.iter().enumerate() {
        arrived[j] += a;
    }

    for t in 1..=cfg.horizon {
        let avail = Availability::new(sample_availability(availability, &rng, t));
        let ctx = EpochContext {
            t,
            queue: &state,
            avail: &avail,
            arrivals: &a_t,
            rng: &rng,
        };
        let alloc = policy.allocate(&ctx, sys)?;
        if cfg.check {
            check_allocation(sys.regime(), &alloc, &avail, sys)
                .and_then(|_| check_against_queue(&alloc, state.counts()))
                .map_err(|v| Error::InfeasibleAllocation(format!("epoch {t}: {v}")))?;
        }
        let used = alloc.total_hours();
        let offered = avail.offered_hours(sys);
        alloc_hours += used;
        offer_hours += offered;
        utilization.push(if offered > 0.0 { used / offered } else { 0.0 });
        backlog.push(state.backlog() - alloc.total_steps());

        let a_next = if t < cfg.horizon {
            sample_arrivals(arrivals, &rng, t + 1)
        } else {
            vec![0; n]
        };
        let outcome = state.advance(sys, &alloc, t, &a_next)?;
        if let Some(w) = log.as_deref_mut() {
            log_epoch(w, sys, t, &alloc, &outcome)?;
        }
        for c in &outcome.completions {
            completed[c.task_type] += 1;
            tat.push(c.tat);
        }
        for (j, &a) in a_next.iter().enumerate() {
            arrived[j] += a;
        }
        a_t = a_next;
    }

    let volume = arrivals.iter().map(|p| p.mean()).sum::<f64>();
    let traj: Vec<f64> = backlog.iter().map(|&b| b as f64).collect();
    let stability = stability_diagnostic(&traj, volume);
    let mean_tat = if tat.is_empty() {
        None
    } else {
        Some(tat.iter().sum::<u64>() as f64 / tat.len() as f64)
    };
    let mean_backlog = backlog.iter().sum::<u64>() as f64 / backlog.len() as f64;
    Ok(MetricsReport {
        policy: policy.kind().name().into(),
        regime: sys.regime(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        epoch_seconds: cfg.epoch_seconds,
        arrived,
        completed,
        live_at_end: state.live_by_type(n),
        tat,
        backlog,
        utilization,
        allocated_hours: alloc_hours,
        offered_hours: offer_hours,
        mean_tat,
        mean_backlog,
        mean_utilization: if offer_hours > 0.0 {
            alloc_hours / offer_hours
        } else {
            0.0
        },
        stability,
    })
}

fn write_event(w: &mut dyn Write, e: &Event) -> Result<()> {
    serde_json::to_writer(&mut *w, e)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn log_arrivals(log: &mut Option<&mut dyn Write>, epoch: u64, admitted: &[(u64, usize)]) -> Result<()> {
    if let Some(w) = log.as_deref_mut() {
        for &(task_id, task_type) in admitted {
            write_event(
                w,
                &Event::Arrival {
                    epoch,
                    task_id,
                    task_type,
                },
            )?;
        }
    }
    Ok(())
}

fn log_epoch(
    w: &mut dyn Write,
    sys: &ValidatedSystem,
    t: u64,
    alloc: &Allocation,
    outcome: &EpochOutcome,
) -> Result<()> {
    let mut by_instance: BTreeMap<(usize, u64), Vec<Assignment>> = BTreeMap::new();
    for a in &alloc.assignments {
        let flat = sys.flat(a.step.task, a.step.step);
        by_instance.entry((flat, a.step.ordinal)).or_default().push(*a);
    }
    for sv in &outcome.served {
        let r = sys.step_ref(sv.flat);
        write_event(
            w,
            &Event::Allocation {
                epoch: t,
                task_id: sv.task_id,
                task: r.task,
                step: r.step,
                assignments: by_instance.remove(&(sv.flat, sv.ordinal)).unwrap_or_default(),
            },
        )?;
    }
    for c in &outcome.completions {
        write_event(
            w,
            &Event::Completion {
                epoch: t,
                task_id: c.task_id,
                task_type: c.task_type,
                tat: c.tat,
            },
        )?;
    }
    let mut next = Some(w);
    log_arrivals(&mut next, t + 1, &outcome.admitted)
}

/// One independent simulation of a run matrix.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub sys: ValidatedSystem,
    pub policy: PolicyKind,
    pub params: PolicyParams,
    pub arrivals: Vec<ProcessSpec>,
    pub availability: Vec<ProcessSpec>,
    pub config: RunConfig,
}

impl Cell {
    pub fn run(&self) -> Result<MetricsReport> {
        let mut policy = Policy::new(self.policy, &self.sys, self.params)?;
        run(&self.sys, &mut policy, &self.arrivals, &self.availability, &self.config, None)
    }
}

/// Runs independent cells on `jobs` threads; results keep the input order.
pub fn run_matrix(cells: &[Cell], jobs: usize) -> Result<Vec<Result<MetricsReport>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(Cell::run).collect()))
}
