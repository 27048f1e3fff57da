//! System instance: skills, agent types, task types with precedence trees,
//! and the flexibility regime.
//!
//! All hours are expressed as fractions of one allocation epoch, so every
//! substep requirement must be strictly below `1.0`. Step indices are 0-based.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processes::ProcessSpec;

/// Index of a skill in `[0, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillId(pub usize);

/// A `(task type, step)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepRef {
    pub task: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flexibility {
    Flexible,
    Inflexible,
}

/// Agent flexibility paired with step flexibility. `"IF"` reads as
/// inflexible agents, flexible steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Regime {
    pub agents: Flexibility,
    pub steps: Flexibility,
}

impl Regime {
    pub const IF: Regime = Regime {
        agents: Flexibility::Inflexible,
        steps: Flexibility::Flexible,
    };
    pub const FF: Regime = Regime {
        agents: Flexibility::Flexible,
        steps: Flexibility::Flexible,
    };
    pub const FI: Regime = Regime {
        agents: Flexibility::Flexible,
        steps: Flexibility::Inflexible,
    };
    pub const II: Regime = Regime {
        agents: Flexibility::Inflexible,
        steps: Flexibility::Inflexible,
    };

    pub const ALL: [Regime; 4] = [Regime::IF, Regime::FF, Regime::FI, Regime::II];

    pub fn flexible_agents(self) -> bool {
        self.agents == Flexibility::Flexible
    }

    pub fn flexible_steps(self) -> bool {
        self.steps == Flexibility::Flexible
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |x: Flexibility| match x {
            Flexibility::Flexible => 'F',
            Flexibility::Inflexible => 'I',
        };
        write!(f, "{}{}", c(self.agents), c(self.steps))
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IF" => Ok(Regime::IF),
            "FF" => Ok(Regime::FF),
            "FI" => Ok(Regime::FI),
            "II" => Ok(Regime::II),
            other => Err(Error::config(
                "regime",
                format!("unknown regime `{other}` (expected IF, FF, FI or II)"),
            )),
        }
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

/// Hours an agent brings per epoch, in the form the agent regime needs.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentHours {
    /// Total budget `h_m`, split freely across the agent's skills.
    Flexible(f64),
    /// Fixed per-skill budgets `h_{m,s}`, indexed by skill.
    Inflexible(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTypeSpec {
    pub skills: BTreeSet<SkillId>,
    pub hours: AgentHours,
}

impl AgentTypeSpec {
    pub fn has_skill(&self, s: usize) -> bool {
        self.skills.contains(&SkillId(s))
    }

    /// True when every skill in `required` is possessed.
    pub fn covers(&self, required: &[usize]) -> bool {
        required.iter().all(|&s| self.has_skill(s))
    }

    pub fn flexible_hours(&self) -> f64 {
        match &self.hours {
            AgentHours::Flexible(h) => *h,
            AgentHours::Inflexible(v) => v.iter().sum(),
        }
    }

    pub fn skill_hours(&self, s: usize) -> f64 {
        match &self.hours {
            AgentHours::Flexible(h) => {
                if self.has_skill(s) {
                    *h
                } else {
                    0.0
                }
            }
            AgentHours::Inflexible(v) => v.get(s).copied().unwrap_or(0.0),
        }
    }
}

/// Rooted precedence tree over the steps of one task type, with cached
/// children, depths (root depth 1) and subtree leaf counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecedenceTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    leaves: Vec<u64>,
    root: usize,
}

impl PrecedenceTree {
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::config("tree", "tree has no nodes"));
        }
        let roots: Vec<usize> = (0..n).filter(|&k| parent[k].is_none()).collect();
        match roots.len() {
            0 => return Err(Error::config("tree", "tree has no root")),
            1 => {}
            _ => return Err(Error::config("tree", "tree has two roots")),
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for (k, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::config(
                        format!("tree node {k}"),
                        format!("parent {p} out of range"),
                    ));
                }
                if p == k {
                    return Err(Error::config(format!("tree node {k}"), "node is its own parent"));
                }
                children[p].push(k);
            }
        }
        let mut depth = vec![0usize; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        depth[root] = 1;
        while let Some(k) = queue.pop_front() {
            order.push(k);
            for &c in &children[k] {
                depth[c] = depth[k] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(Error::config("tree", "tree has a cycle or unreachable node"));
        }
        let mut leaves = vec![0u64; n];
        for &k in order.iter().rev() {
            leaves[k] = if children[k].is_empty() {
                1
            } else {
                children[k].iter().map(|&c| leaves[c]).sum()
            };
        }
        Ok(PrecedenceTree {
            parent,
            children,
            depth,
            leaves,
            root,
        })
    }

    /// A chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Self {
        let parent = (0..n).map(|k| k.checked_sub(1)).collect();
        Self::new(parent).expect("chain is a valid tree")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn depth(&self, k: usize) -> usize {
        self.depth[k]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Number of leaves in the subtree rooted at `k`.
    pub fn leaves(&self, k: usize) -> u64 {
        self.leaves[k]
    }

    pub fn is_leaf(&self, k: usize) -> bool {
        self.children[k].is_empty()
    }
}

/// Number of leaves in the subtree of `tree` rooted at `node`.
pub fn tree_leaves(tree: &PrecedenceTree, node: usize) -> u64 {
    tree.leaves(node)
}

/// One step's skill-hour requirement vector with cached support.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSpec {
    hours: Vec<f64>,
    skills: Vec<usize>,
    total: f64,
}

impl StepSpec {
    fn new(hours: Vec<f64>) -> Self {
        let skills = (0..hours.len()).filter(|&s| hours[s] > 0.0).collect();
        let total = hours.iter().sum();
        StepSpec {
            hours,
            skills,
            total,
        }
    }

    pub fn hours(&self) -> &[f64] {
        &self.hours
    }

    pub fn hours_of(&self, s: usize) -> f64 {
        self.hours[s]
    }

    /// Skills with a positive substep, ascending.
    pub fn skills(&self) -> &[usize] {
        &self.skills
    }

    /// Sum of the substep sizes.
    pub fn total(&self) -> f64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTypeSpec {
    pub steps: Vec<StepSpec>,
    pub tree: PrecedenceTree,
    /// Mean arrivals per epoch.
    pub arrival_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSystem {
    num_skills: usize,
    agent_types: Vec<AgentTypeSpec>,
    task_types: Vec<TaskTypeSpec>,
    regime: Regime,
    offsets: Vec<usize>,
    refs: Vec<StepRef>,
}

impl ValidatedSystem {
    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn agent_types(&self) -> &[AgentTypeSpec] {
        &self.agent_types
    }

    pub fn task_types(&self) -> &[TaskTypeSpec] {
        &self.task_types
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn num_agent_types(&self) -> usize {
        self.agent_types.len()
    }

    pub fn num_task_types(&self) -> usize {
        self.task_types.len()
    }

    /// Total number of step types, `sum_j K_j`.
    pub fn num_step_types(&self) -> usize {
        self.refs.len()
    }

    /// Flat index of step `(j, k)`; step types of task `j` are contiguous.
    pub fn flat(&self, j: usize, k: usize) -> usize {
        self.offsets[j] + k
    }

    pub fn step_ref(&self, flat: usize) -> StepRef {
        self.refs[flat]
    }

    pub fn step_refs(&self) -> &[StepRef] {
        &self.refs
    }

    pub fn step(&self, flat: usize) -> &StepSpec {
        let r = self.refs[flat];
        &self.task_types[r.task].steps[r.step]
    }

    pub fn task_offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn max_depth(&self) -> usize {
        self.task_types
            .iter()
            .map(|t| t.tree.max_depth())
            .max()
            .unwrap_or(0)
    }

    pub fn depth_of(&self, flat: usize) -> usize {
        let r = self.refs[flat];
        self.task_types[r.task].tree.depth(r.step)
    }

    pub fn arrival_rates(&self) -> Vec<f64> {
        self.task_types.iter().map(|t| t.arrival_rate).collect()
    }

    /// Per-step replication of a per-task-type vector (`a^E`).
    pub fn expand(&self, per_task: &[f64]) -> Vec<f64> {
        self.refs.iter().map(|r| per_task[r.task]).collect()
    }

    /// True when some single agent type possesses every skill of the step.
    pub fn step_coverable(&self, flat: usize) -> bool {
        let step = self.step(flat);
        self.agent_types.iter().any(|a| a.covers(step.skills()))
    }

    /// Re-validates the same instance under another regime. Agent
    /// flexibility cannot change, since only one kind of hours is kept.
    pub fn with_regime(&self, regime: Regime) -> Result<ValidatedSystem> {
        if regime.agents != self.regime.agents {
            return Err(Error::config(
                "regime",
                format!(
                    "cannot switch {} system to {regime}: agent hours are {}",
                    self.regime,
                    if self.regime.flexible_agents() {
                        "flexible"
                    } else {
                        "per-skill"
                    }
                ),
            ));
        }
        let mut sys = self.clone();
        sys.regime = regime;
        Ok(sys)
    }

    /// Replaces the arrival rates, one per task type.
    pub fn with_rates(&self, rates: &[f64]) -> ValidatedSystem {
        let mut sys = self.clone();
        for (t, &r) in sys.task_types.iter_mut().zip(rates) {
            t.arrival_rate = r;
        }
        sys
    }

    /// Converts back into the config document form.
    pub fn to_config(&self) -> SystemConfig {
        SystemConfig {
            skills: self.num_skills,
            regime: self.regime,
            agent_types: self
                .agent_types
                .iter()
                .map(|a| {
                    let (hours, skill_hours) = match &a.hours {
                        AgentHours::Flexible(h) => (Some(*h), None),
                        AgentHours::Inflexible(v) => (
                            None,
                            Some(
                                v.iter()
                                    .enumerate()
                                    .filter(|(_, &h)| h > 0.0)
                                    .map(|(s, &h)| (s, h))
                                    .collect(),
                            ),
                        ),
                    };
                    AgentTypeConfig {
                        skills: a.skills.iter().map(|s| s.0).collect(),
                        hours,
                        skill_hours,
                        availability: None,
                    }
                })
                .collect(),
            task_types: self
                .task_types
                .iter()
                .map(|t| TaskTypeConfig {
                    steps: t
                        .steps
                        .iter()
                        .map(|st| {
                            st.skills()
                                .iter()
                                .map(|&s| (s, st.hours_of(s)))
                                .collect()
                        })
                        .collect(),
                    parent: Some(t.tree.parents().to_vec()),
                    rate: Some(t.arrival_rate),
                    arrivals: None,
                })
                .collect(),
        }
    }
}

/// The external config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub skills: usize,
    pub regime: Regime,
    pub agent_types: Vec<AgentTypeConfig>,
    pub task_types: Vec<TaskTypeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTypeConfig {
    pub skills: Vec<usize>,
    /// Flexible budget `h_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hours: Option<f64>,
    /// Inflexible per-skill budgets `h_{m,s}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_hours: Option<BTreeMap<usize, f64>>,
    /// Availability process; one available agent per epoch when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<ProcessSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTypeConfig {
    /// Skill -> hours, one map per step.
    pub steps: Vec<BTreeMap<usize, f64>>,
    /// `parent[k]`, `null` for the root. A chain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Vec<Option<usize>>>,
    /// Mean arrivals per epoch; Poisson arrivals unless `arrivals` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<ProcessSpec>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Arrival process per task type.
    pub fn arrival_specs(&self) -> Vec<ProcessSpec> {
        self.task_types
            .iter()
            .map(|t| match (&t.arrivals, t.rate) {
                (Some(spec), _) => spec.clone(),
                (None, rate) => ProcessSpec::Poisson {
                    mean: rate.unwrap_or(0.0),
                },
            })
            .collect()
    }

    /// Availability process per agent type.
    pub fn availability_specs(&self) -> Vec<ProcessSpec> {
        self.agent_types
            .iter()
            .map(|a| {
                a.availability
                    .clone()
                    .unwrap_or(ProcessSpec::Deterministic { value: 1 })
            })
            .collect()
    }
}

fn finite_nonneg(path: &str, what: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::config(path, format!("{what} must be finite and >= 0, got {x}")));
    }
    Ok(())
}

/// Validates a config document, reporting the first violated invariant.
pub fn validate_config(cfg: &SystemConfig) -> Result<ValidatedSystem> {
    let s_count = cfg.skills;
    let regime = cfg.regime;

    let mut agent_types = Vec::with_capacity(cfg.agent_types.len());
    for (m, a) in cfg.agent_types.iter().enumerate() {
        let path = format!("agent {m}");
        let mut skills = BTreeSet::new();
        for &s in &a.skills {
            if s >= s_count {
                return Err(Error::config(&path, format!("skill {s} out of range (S = {s_count})")));
            }
            if !skills.insert(SkillId(s)) {
                return Err(Error::config(&path, format!("skill {s} listed twice")));
            }
        }
        let hours = if regime.flexible_agents() {
            let h = a.hours.ok_or_else(|| {
                Error::config(&path, "flexible agents need `hours`")
            })?;
            if !h.is_finite() || h <= 0.0 {
                return Err(Error::config(&path, format!("hours must be > 0, got {h}")));
            }
            AgentHours::Flexible(h)
        } else {
            let map = a.skill_hours.as_ref().ok_or_else(|| {
                Error::config(&path, "inflexible agents need `skill_hours`")
            })?;
            let mut v = vec![0.0; s_count];
            for (&s, &h) in map {
                if s >= s_count {
                    return Err(Error::config(&path, format!("skill_hours skill {s} out of range")));
                }
                finite_nonneg(&path, "skill hours", h)?;
                v[s] = h;
            }
            for (s, &h) in v.iter().enumerate() {
                let has = skills.contains(&SkillId(s));
                if has != (h > 0.0) {
                    return Err(Error::config(
                        &path,
                        format!("skill {s}: skill_hours must be positive exactly for possessed skills"),
                    ));
                }
            }
            AgentHours::Inflexible(v)
        };
        if let Some(spec) = &a.availability {
            spec.validate().map_err(|e| Error::config(format!("{path} availability"), e))?;
        }
        agent_types.push(AgentTypeSpec { skills, hours });
    }

    let mut task_types = Vec::with_capacity(cfg.task_types.len());
    for (j, t) in cfg.task_types.iter().enumerate() {
        let path = format!("task {j}");
        if t.steps.is_empty() {
            return Err(Error::config(&path, "task has no steps"));
        }
        let mut steps = Vec::with_capacity(t.steps.len());
        for (k, map) in t.steps.iter().enumerate() {
            let spath = format!("task {j} step {k}");
            let mut v = vec![0.0; s_count];
            for (&s, &r) in map {
                if s >= s_count {
                    return Err(Error::config(&spath, format!("skill {s} out of range (S = {s_count})")));
                }
                finite_nonneg(&spath, "substep hours", r)?;
                if r >= 1.0 {
                    return Err(Error::config(
                        &spath,
                        format!("skill {s}: substep not shorter than epoch (r = {r})"),
                    ));
                }
                v[s] = r;
            }
            if v.iter().all(|&r| r == 0.0) {
                return Err(Error::config(&spath, "step has no positive substep"));
            }
            steps.push(StepSpec::new(v));
        }
        let parent = t
            .parent
            .clone()
            .unwrap_or_else(|| (0..steps.len()).map(|k| k.checked_sub(1)).collect());
        if parent.len() != steps.len() {
            return Err(Error::config(
                &path,
                format!("parent array has {} entries for {} steps", parent.len(), steps.len()),
            ));
        }
        let tree = PrecedenceTree::new(parent).map_err(|e| match e {
            Error::Config { path: p, msg } => Error::config(format!("{path} {p}"), msg),
            other => other,
        })?;
        let rate = match (&t.arrivals, t.rate) {
            (Some(spec), _) => {
                spec.validate().map_err(|e| Error::config(format!("{path} arrivals"), e))?;
                spec.mean()
            }
            (None, r) => r.unwrap_or(0.0),
        };
        finite_nonneg(&path, "rate", rate)?;
        task_types.push(TaskTypeSpec {
            steps,
            tree,
            arrival_rate: rate,
        });
    }

    for (j, t) in task_types.iter().enumerate() {
        for (k, st) in t.steps.iter().enumerate() {
            for &s in st.skills() {
                if !agent_types.iter().any(|a| a.has_skill(s)) {
                    return Err(Error::config(
                        format!("task {j} step {k}"),
                        format!("skill {s} is possessed by no agent type"),
                    ));
                }
            }
        }
    }

    Ok(build_system(s_count, agent_types, task_types, regime))
}

pub(crate) fn build_system(
    num_skills: usize,
    agent_types: Vec<AgentTypeSpec>,
    task_types: Vec<TaskTypeSpec>,
    regime: Regime,
) -> ValidatedSystem {
    let mut offsets = Vec::with_capacity(task_types.len());
    let mut refs = Vec::new();
    for (j, t) in task_types.iter().enumerate() {
        offsets.push(refs.len());
        refs.extend((0..t.steps.len()).map(|k| StepRef { task: j, step: k }));
    }
    ValidatedSystem {
        num_skills,
        agent_types,
        task_types,
        regime,
        offsets,
        refs,
    }
}

/// Step types grouped by tree depth; entry `d - 1` holds depth `d`.
pub fn depth_classes(sys: &ValidatedSystem) -> Vec<Vec<StepRef>> {
    let mut classes = vec![Vec::new(); sys.max_depth()];
    for &r in sys.step_refs() {
        let d = sys.task_types()[r.task].tree.depth(r.step);
        classes[d - 1].push(r);
    }
    classes
}
