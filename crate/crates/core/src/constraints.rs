//! Allocation records and their feasibility check.
//!
//! Every allocation carries an explicit witness: which agent instance gives
//! how many hours of which skill to which step instance. Checking works on
//! the witness alone, uniformly across the four regimes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AgentHours, Regime, StepRef, ValidatedSystem};

/// Hour sums are compared with this absolute slack.
pub const HOURS_TOL: f64 = 1e-9;

/// One available agent: instance `index` of agent type `agent_type`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub agent_type: usize,
    pub index: u64,
}

/// The `ordinal`-th oldest queued instance of a step type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepInstance {
    pub task: usize,
    pub step: usize,
    pub ordinal: u64,
}

impl StepInstance {
    pub fn step_ref(&self) -> StepRef {
        StepRef {
            task: self.task,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub agent: AgentId,
    pub step: StepInstance,
    pub skill: usize,
    pub hours: f64,
}

/// One epoch's decision: step counts `S_{j,k}` (flat-indexed) plus the witness.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: Vec<u64>,
    pub assignments: Vec<Assignment>,
}

impl Allocation {
    pub fn empty(sys: &ValidatedSystem) -> Self {
        Allocation {
            counts: vec![0; sys.num_step_types()],
            assignments: Vec::new(),
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_hours(&self) -> f64 {
        self.assignments.iter().map(|a| a.hours).sum()
    }

    /// `sum_{j,k} w_{j,k} S_{j,k}`.
    pub fn objective(&self, weights: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(weights)
            .map(|(&c, &w)| c as f64 * w)
            .sum()
    }
}

/// Agents available this epoch, `u_m` per type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Availability {
    pub counts: Vec<u64>,
}

impl Availability {
    pub fn new(counts: Vec<u64>) -> Self {
        Availability { counts }
    }

    pub fn zero(num_types: usize) -> Self {
        Availability {
            counts: vec![0; num_types],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Agent instances ordered by type, then index.
    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.counts.iter().enumerate().flat_map(|(m, &u)| {
            (0..u).map(move |index| AgentId {
                agent_type: m,
                index,
            })
        })
    }

    /// Hours offered this epoch.
    pub fn offered_hours(&self, sys: &ValidatedSystem) -> f64 {
        self.counts
            .iter()
            .zip(sys.agent_types())
            .map(|(&u, a)| u as f64 * a.flexible_hours())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn violation<T>(msg: String) -> Result<T, Violation> {
    Err(Violation(msg))
}

/// Checks the witness of `alloc` against the allocation constraints of
/// `regime`.
pub fn check_allocation(
    regime: Regime,
    alloc: &Allocation,
    avail: &Availability,
    sys: &ValidatedSystem,
) -> Result<(), Violation> {
    if alloc.counts.len() != sys.num_step_types() {
        return violation(format!(
            "counts has {} entries, system has {} step types",
            alloc.counts.len(),
            sys.num_step_types()
        ));
    }
    let s_count = sys.num_skills();
    // (flat, ordinal) -> (hours per skill, first agent, single agent?)
    let mut cover: BTreeMap<(usize, u64), (Vec<f64>, AgentId, bool)> = BTreeMap::new();
    let mut skill_use: BTreeMap<(AgentId, usize), f64> = BTreeMap::new();
    let mut total_use: BTreeMap<AgentId, f64> = BTreeMap::new();

    for a in &alloc.assignments {
        let m = a.agent.agent_type;
        if m >= sys.num_agent_types() || a.agent.index >= avail.counts.get(m).copied().unwrap_or(0) {
            return violation(format!("agent {:?} is not available", a.agent));
        }
        if a.step.task >= sys.num_task_types()
            || a.step.step >= sys.task_types()[a.step.task].steps.len()
        {
            return violation(format!("unknown step {:?}", a.step));
        }
        if a.skill >= s_count {
            return violation(format!("skill {} out of range", a.skill));
        }
        if !a.hours.is_finite() || a.hours < 0.0 {
            return violation(format!("negative or non-finite hours {} in {a:?}", a.hours));
        }
        let flat = sys.flat(a.step.task, a.step.step);
        if a.hours > 0.0 {
            if sys.step(flat).hours_of(a.skill) == 0.0 {
                return violation(format!(
                    "step {:?} does not require skill {}",
                    a.step, a.skill
                ));
            }
            if !sys.agent_types()[m].has_skill(a.skill) {
                return violation(format!(
                    "skill not possessed: agent {:?} lacks skill {} for step {:?}",
                    a.agent, a.skill, a.step
                ));
            }
        }
        let entry = cover
            .entry((flat, a.step.ordinal))
            .or_insert_with(|| (vec![0.0; s_count], a.agent, true));
        entry.0[a.skill] += a.hours;
        if a.hours > 0.0 && entry.1 != a.agent {
            entry.2 = false;
        }
        *skill_use.entry((a.agent, a.skill)).or_insert(0.0) += a.hours;
        *total_use.entry(a.agent).or_insert(0.0) += a.hours;
    }

    let mut distinct = vec![0u64; sys.num_step_types()];
    for (&(flat, ordinal), (hours, _, single)) in &cover {
        let step = sys.step(flat);
        let r = sys.step_ref(flat);
        for &s in step.skills() {
            if hours[s] < step.hours_of(s) - HOURS_TOL {
                return violation(format!(
                    "step {r:?}#{ordinal} skill {s}: covered {} of {} hours",
                    hours[s],
                    step.hours_of(s)
                ));
            }
        }
        if !regime.flexible_steps() && !single {
            return violation(format!(
                "inflexible step {r:?}#{ordinal} is split across agents"
            ));
        }
        if ordinal >= alloc.counts[flat] {
            return violation(format!(
                "step {r:?}#{ordinal} beyond count {}",
                alloc.counts[flat]
            ));
        }
        distinct[flat] += 1;
    }
    for (flat, (&c, &d)) in alloc.counts.iter().zip(&distinct).enumerate() {
        if c != d {
            return violation(format!(
                "step {:?}: count {c} but {d} instances witnessed",
                sys.step_ref(flat)
            ));
        }
    }

    for (agent, used) in &total_use {
        let spec = &sys.agent_types()[agent.agent_type];
        match (&spec.hours, regime.flexible_agents()) {
            (AgentHours::Flexible(h), true) => {
                if *used > h + HOURS_TOL {
                    return violation(format!(
                        "agent {agent:?} uses {used} of {h} flexible hours"
                    ));
                }
            }
            (AgentHours::Inflexible(hs), false) => {
                for (s, &h) in hs.iter().enumerate() {
                    let u = skill_use.get(&(*agent, s)).copied().unwrap_or(0.0);
                    if u > h + HOURS_TOL {
                        return violation(format!(
                            "agent {agent:?} uses {u} of {h} hours of skill {s}"
                        ));
                    }
                }
            }
            _ => {
                return violation(format!(
                    "agent type {} hours do not match regime {regime}",
                    agent.agent_type
                ))
            }
        }
    }
    Ok(())
}

/// Checks `S_{j,k} <= Q_{j,k}`.
pub fn check_against_queue(alloc: &Allocation, queue: &[u64]) -> Result<(), Violation> {
    for (flat, (&s, &q)) in alloc.counts.iter().zip(queue).enumerate() {
        if s > q {
            return violation(format!("step type {flat}: allocated {s} > queued {q}"));
        }
    }
    Ok(())
}

/// Hours available per skill this epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct HourTotals {
    /// Inflexible agents: `sum_m u_m h_{m,s}`. Flexible agents: hours of
    /// agents eligible for skill `s`, `sum_{m: s in S_m} u_m h_m`.
    pub per_skill: Vec<f64>,
    /// Flexible agents only: the shared budget `sum_m u_m h_m`.
    pub pooled: Option<f64>,
}

pub fn aggregate_hours(avail: &Availability, sys: &ValidatedSystem) -> HourTotals {
    let mut per_skill = vec![0.0; sys.num_skills()];
    let mut pooled = None;
    for (a, &u) in sys.agent_types().iter().zip(&avail.counts) {
        let u = u as f64;
        match &a.hours {
            AgentHours::Inflexible(hs) => {
                for (s, &h) in hs.iter().enumerate() {
                    per_skill[s] += u * h;
                }
            }
            AgentHours::Flexible(h) => {
                for s in a.skills.iter() {
                    per_skill[s.0] += u * h;
                }
                *pooled.get_or_insert(0.0) += u * h;
            }
        }
    }
    HourTotals { per_skill, pooled }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{t1, two_skill_flexible};

    fn inst(task: usize, step: usize, ordinal: u64) -> StepInstance {
        StepInstance { task, step, ordinal }
    }

    fn agent(m: usize, i: u64) -> AgentId {
        AgentId {
            agent_type: m,
            index: i,
        }
    }

    #[test]
    fn empty_allocation_is_ok() {
        let sys = t1();
        let alloc = Allocation::empty(&sys);
        assert!(check_allocation(Regime::IF, &alloc, &Availability::new(vec![1, 1]), &sys).is_ok());
    }

    #[test]
    fn flexible_split_within_budget() {
        // one agent type {0,1}, h = 1; one-step task needing (0.5, 0.5)
        let sys = two_skill_flexible(1.0, Regime::FF);
        let avail = Availability::new(vec![2]);
        let mut alloc = Allocation::empty(&sys);
        alloc.counts[0] = 2;
        for a in 0..2u64 {
            for s in 0..2 {
                alloc.assignments.push(Assignment {
                    agent: agent(0, a),
                    step: inst(0, 0, a),
                    skill: s,
                    hours: 0.5,
                });
            }
        }
        assert!(check_allocation(Regime::FF, &alloc, &avail, &sys).is_ok());

        // a third step must draw 1 more hour from somewhere: 3 > 2 hours
        alloc.counts[0] = 3;
        for s in 0..2 {
            alloc.assignments.push(Assignment {
                agent: agent(0, 1),
                step: inst(0, 0, 2),
                skill: s,
                hours: 0.5,
            });
        }
        let e = check_allocation(Regime::FF, &alloc, &avail, &sys).unwrap_err();
        assert!(e.0.contains("flexible hours"), "{e}");
    }

    #[test]
    fn inflexible_step_needs_covering_agent() {
        use crate::model::*;
        use std::collections::BTreeMap;
        let cfg = SystemConfig {
            skills: 2,
            regime: Regime::FI,
            agent_types: vec![
                AgentTypeConfig {
                    skills: vec![0],
                    hours: Some(1.0),
                    skill_hours: None,
                    availability: None,
                },
                AgentTypeConfig {
                    skills: vec![1],
                    hours: Some(1.0),
                    skill_hours: None,
                    availability: None,
                },
            ],
            task_types: vec![TaskTypeConfig {
                steps: vec![BTreeMap::from([(0, 0.2), (1, 0.2)])],
                parent: None,
                rate: None,
                arrivals: None,
            }],
        };
        let sys = validate_config(&cfg).unwrap();
        let avail = Availability::new(vec![1, 1]);
        let mut alloc = Allocation::empty(&sys);
        alloc.counts[0] = 1;
        for s in 0..2 {
            alloc.assignments.push(Assignment {
                agent: agent(0, 0),
                step: inst(0, 0, 0),
                skill: s,
                hours: 0.2,
            });
        }
        let e = check_allocation(Regime::FI, &alloc, &avail, &sys).unwrap_err();
        assert!(e.0.contains("skill not possessed"), "{e}");

        // split over the two agents is fine for flexible steps, not inflexible
        alloc.assignments[1].agent = agent(1, 0);
        let sys_ff = sys.with_regime(Regime::FF).unwrap();
        assert!(check_allocation(Regime::FF, &alloc, &avail, &sys_ff).is_ok());
        let e = check_allocation(Regime::FI, &alloc, &avail, &sys).unwrap_err();
        assert!(e.0.contains("split"), "{e}");
    }

    #[test]
    fn counts_must_match_witness() {
        let sys = t1();
        let avail = Availability::new(vec![1, 1]);
        let mut alloc = Allocation::empty(&sys);
        alloc.counts[0] = 1;
        assert!(check_allocation(Regime::IF, &alloc, &avail, &sys).is_err());
        alloc.assignments.push(Assignment {
            agent: agent(0, 0),
            step: inst(0, 0, 0),
            skill: 0,
            hours: 0.4,
        });
        let e = check_allocation(Regime::IF, &alloc, &avail, &sys).unwrap_err();
        assert!(e.0.contains("covered"), "{e}");
        alloc.assignments[0].hours = 0.5;
        assert!(check_allocation(Regime::IF, &alloc, &avail, &sys).is_ok());
        alloc.assignments[0].agent = agent(0, 1);
        assert!(check_allocation(Regime::IF, &alloc, &avail, &sys).is_err());
    }

    #[test]
    fn per_skill_budget_for_inflexible_agents() {
        let sys = t1();
        let avail = Availability::new(vec![1, 1]);
        let mut alloc = Allocation::empty(&sys);
        alloc.counts[0] = 3;
        for o in 0..3 {
            alloc.assignments.push(Assignment {
                agent: agent(0, 0),
                step: inst(0, 0, o),
                skill: 0,
                hours: 0.5,
            });
        }
        let e = check_allocation(Regime::IF, &alloc, &avail, &sys).unwrap_err();
        assert!(e.0.contains("skill 0"), "{e}");
    }

    #[test]
    fn aggregate_hours_examples() {
        let sys = t1();
        let h = aggregate_hours(&Availability::new(vec![1, 1]), &sys);
        assert_eq!(h.per_skill, vec![1.0, 1.0]);
        assert_eq!(h.pooled, None);
        let h = aggregate_hours(&Availability::new(vec![0, 0]), &sys);
        assert_eq!(h.per_skill, vec![0.0, 0.0]);

        use crate::model::*;
        use std::collections::BTreeMap;
        let cfg = SystemConfig {
            skills: 1,
            regime: Regime::IF,
            agent_types: vec![AgentTypeConfig {
                skills: vec![0],
                hours: None,
                skill_hours: Some(BTreeMap::from([(0, 0.4)])),
                availability: None,
            }],
            task_types: vec![],
        };
        let sys = validate_config(&cfg).unwrap();
        let h = aggregate_hours(&Availability::new(vec![3]), &sys);
        assert!((h.per_skill[0] - 1.2).abs() < 1e-12);
    }
}
