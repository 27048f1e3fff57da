//! Decentralized greedy allocation: Prioritized Greedy for (I,F), its
//! flexible-agent extension for (F,F), Restricted Greedy for (F,I), and the
//! simplified ALGO1/ALGO2/ALGO3 variants used on traces.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::constraints::{Allocation, Assignment, Availability, StepInstance};
use crate::linprog::{solve_lp, LpProblem, LpStatus};
use crate::model::{Regime, ValidatedSystem};
use crate::packing::{agent_slots, split_cover, AgentSlot, Budget};
use crate::processes::{Domain, Rng};
use crate::sim::QueueState;

/// Per-epoch random sub-streams of a greedy policy.
const CONTENTION: u64 = 0;
const AGENT_ORDER: u64 = 1;
const TAGGING: u64 = 2;
const SIMPLEX: u64 = 3;

/// One queued step instance waiting for a contention slot.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    released: u64,
    key: u64,
    flat: usize,
}

/// Queued instances of `flats`, oldest first, ties broken by seeded keys.
/// At most `limit(flat)` instances per type are listed.
fn contention_order(
    flats: &[usize],
    queue: &QueueState,
    rng: &mut ChaCha8Rng,
    limit: impl Fn(usize) -> u64,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for &flat in flats {
        let cap = limit(flat);
        for released in queue.releases(flat).take(cap as usize) {
            out.push(Candidate {
                released,
                key: rng.next_u64(),
                flat,
            });
        }
    }
    out.sort_by(|a, b| {
        a.released
            .cmp(&b.released)
            .then(a.key.cmp(&b.key))
            .then(a.flat.cmp(&b.flat))
    });
    out
}

/// Upper bound on how many instances of `flat` the offered hours can serve.
fn serviceable(sys: &ValidatedSystem, slots: &[AgentSlot], flat: usize) -> u64 {
    let hours: f64 = slots.iter().map(|a| a.total_remaining()).sum();
    (hours / sys.step(flat).total()).floor() as u64 + 1
}

/// Greedy pass over contention-ordered candidates. `place` tries to serve
/// one instance and returns its assignments. A type that fails once is
/// skipped for the rest of the pass: resources only shrink.
fn greedy_pass(
    candidates: &[Candidate],
    sys: &ValidatedSystem,
    alloc: &mut Allocation,
    failed: &mut [bool],
    mut place: impl FnMut(usize, StepInstance) -> Option<Vec<Assignment>>,
) {
    for c in candidates {
        if failed[c.flat] {
            continue;
        }
        let r = sys.step_ref(c.flat);
        let inst = StepInstance {
            task: r.task,
            step: r.step,
            ordinal: alloc.counts[c.flat],
        };
        match place(c.flat, inst) {
            Some(a) => {
                alloc.counts[c.flat] += 1;
                alloc.assignments.extend(a);
            }
            None => failed[c.flat] = true,
        }
    }
}

/// Step types of each depth, flat-indexed; entry `d - 1` holds depth `d`.
fn flats_by_depth(sys: &ValidatedSystem) -> Vec<Vec<usize>> {
    crate::model::depth_classes(sys)
        .into_iter()
        .map(|class| class.iter().map(|r| sys.flat(r.task, r.step)).collect())
        .collect()
}

/// Depth-prioritized greedy over the given agent slots, splitting substeps
/// across agents taken in `order`.
fn prioritized_over_slots(
    queue: &QueueState,
    mut slots: Vec<AgentSlot>,
    order: &[usize],
    sys: &ValidatedSystem,
    rng: &mut ChaCha8Rng,
    atomic_first: Option<bool>,
) -> Allocation {
    let mut alloc = Allocation::empty(sys);
    let mut failed = vec![false; sys.num_step_types()];
    for class in flats_by_depth(sys) {
        let cands = contention_order(&class, queue, rng, |f| serviceable(sys, &slots, f));
        greedy_pass(&cands, sys, &mut alloc, &mut failed, |flat, inst| match atomic_first {
            None => split_cover(&mut slots, order, sys, flat, inst, false),
            Some(false) => split_cover(&mut slots, order, sys, flat, inst, true),
            Some(true) => split_cover(&mut slots, order, sys, flat, inst, true)
                .or_else(|| split_cover(&mut slots, order, sys, flat, inst, false)),
        });
    }
    alloc
}

/// Algorithm 1 for (I,F): depth classes in order, each step instance served
/// iff all its substeps can be covered from agents' remaining per-skill hours.
pub fn prioritized_greedy(
    queue: &QueueState,
    avail: &Availability,
    sys: &ValidatedSystem,
    rng: &Rng,
    t: u64,
) -> Allocation {
    let slots = agent_slots(avail, sys);
    let order: Vec<usize> = (0..slots.len()).collect();
    let mut crng = rng.stream(Domain::Policy, t, CONTENTION);
    prioritized_over_slots(queue, slots, &order, sys, &mut crng, None)
}

/// Step-size schedule of the running averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSchedule {
    /// `gamma(x) = 1 / x`, the running mean.
    Harmonic,
    /// `gamma(x) = x^(-p)`.
    Power(f64),
}

impl GammaSchedule {
    pub fn at(self, x: u64) -> f64 {
        let x = x.max(1) as f64;
        match self {
            GammaSchedule::Harmonic => 1.0 / x,
            GammaSchedule::Power(p) => x.powf(-p),
        }
    }
}

impl std::str::FromStr for GammaSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "harmonic" | "1/x" => Ok(GammaSchedule::Harmonic),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|p| *p > 0.0 && *p <= 1.0)
                .map(GammaSchedule::Power)
                .ok_or_else(|| format!("gamma must be `harmonic` or an exponent in (0, 1], got `{other}`")),
        }
    }
}

/// Running estimates kept by Algorithm 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexGreedyState {
    /// Running arrival average per task type.
    pub abar: Vec<f64>,
    /// Running availability average per agent type.
    pub ubar: Vec<f64>,
    /// Epochs since start, `t - t0`.
    pub elapsed: u64,
    pub epsilon: f64,
    pub gamma: GammaSchedule,
    /// Tagging probabilities `psi_{m,s}` used in the last epoch.
    pub psi: Vec<Vec<f64>>,
    /// Whether the last epoch fell back to a random simplex point.
    pub fallback: bool,
}

impl FlexGreedyState {
    pub fn new(sys: &ValidatedSystem, epsilon: f64, gamma: GammaSchedule) -> Self {
        FlexGreedyState {
            abar: vec![1.0; sys.num_task_types()],
            ubar: vec![1.0; sys.num_agent_types()],
            elapsed: 0,
            epsilon,
            gamma,
            psi: vec![vec![0.0; sys.num_skills()]; sys.num_agent_types()],
            fallback: false,
        }
    }

    /// Folds in this epoch's arrivals and availability.
    pub fn update(&mut self, arrivals: &[u64], avail: &Availability) {
        self.elapsed += 1;
        let g = self.gamma.at(self.elapsed);
        for (a, &x) in self.abar.iter_mut().zip(arrivals) {
            *a = (1.0 - g) * *a + g * x as f64;
        }
        for (u, &x) in self.ubar.iter_mut().zip(&avail.counts) {
            *u = (1.0 - g) * *u + g * x as f64;
        }
    }
}

/// Solves for tagging probabilities `psi` such that for every skill
/// `sum_{j,k} abar_j r_{j,k,s} <= (1 - eps) sum_{m: s in S_m} ubar_m h_m psi_{m,s}`
/// with `sum_s psi_{m,s} <= 1`, maximizing `sum psi`. `None` if infeasible.
pub fn tagging_probabilities(
    abar: &[f64],
    ubar: &[f64],
    epsilon: f64,
    sys: &ValidatedSystem,
) -> Option<Vec<Vec<f64>>> {
    let s_count = sys.num_skills();
    let mut vars = Vec::new();
    for (m, a) in sys.agent_types().iter().enumerate() {
        for s in a.skills.iter() {
            vars.push((m, s.0));
        }
    }
    let mut p = LpProblem::new(vec![1.0; vars.len()]);
    for m in 0..sys.num_agent_types() {
        let row = vars.iter().map(|&(mm, _)| if mm == m { 1.0 } else { 0.0 }).collect();
        p.le(row, 1.0);
    }
    let load = {
        let mut l = vec![0.0; s_count];
        for flat in 0..sys.num_step_types() {
            let j = sys.step_ref(flat).task;
            for &s in sys.step(flat).skills() {
                l[s] += abar[j] * sys.step(flat).hours_of(s);
            }
        }
        l
    };
    for (s, &ls) in load.iter().enumerate() {
        let row = vars
            .iter()
            .map(|&(m, ss)| {
                if ss == s {
                    (1.0 - epsilon) * ubar[m] * sys.agent_types()[m].flexible_hours()
                } else {
                    0.0
                }
            })
            .collect();
        p.ge(row, ls);
    }
    let sol = solve_lp(&p);
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let mut psi = vec![vec![0.0; s_count]; sys.num_agent_types()];
    for (&(m, s), &x) in vars.iter().zip(&sol.x) {
        psi[m][s] = x.clamp(0.0, 1.0);
    }
    Some(psi)
}

/// Uniform point on the simplex over each agent type's skills.
pub fn random_simplex(sys: &ValidatedSystem, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    sys.agent_types()
        .iter()
        .map(|a| {
            let mut row = vec![0.0; sys.num_skills()];
            let draws: Vec<(usize, f64)> = a
                .skills
                .iter()
                .map(|s| (s.0, Exp1.sample(rng)))
                .collect();
            let total: f64 = draws.iter().map(|d| d.1).sum();
            for (s, x) in draws {
                row[s] = x / total;
            }
            row
        })
        .collect()
}

/// Algorithm 2 for (F,F): update the running averages, choose `psi`, tag
/// each available agent with at most one skill, then run Algorithm 1 on the
/// tagged agents, each offering `h_m` hours of its tag.
pub fn flex_greedy(
    state: &mut FlexGreedyState,
    queue: &QueueState,
    arrivals: &[u64],
    avail: &Availability,
    sys: &ValidatedSystem,
    rng: &Rng,
    t: u64,
) -> Allocation {
    state.update(arrivals, avail);
    let psi = match tagging_probabilities(&state.abar, &state.ubar, state.epsilon, sys) {
        Some(p) => {
            state.fallback = false;
            p
        }
        None => {
            state.fallback = true;
            random_simplex(sys, &mut rng.stream(Domain::Policy, t, SIMPLEX))
        }
    };
    let mut tag_rng = rng.stream(Domain::Policy, t, TAGGING);
    let mut slots = Vec::new();
    for id in avail.agents() {
        let m = id.agent_type;
        let x: f64 = tag_rng.random();
        let mut acc = 0.0;
        let tag = (0..sys.num_skills()).find(|&s| {
            acc += psi[m][s];
            x < acc
        });
        if let Some(s) = tag {
            let mut hs = vec![0.0; sys.num_skills()];
            hs[s] = sys.agent_types()[m].flexible_hours();
            slots.push(AgentSlot {
                id,
                budget: Budget::PerSkill(hs),
            });
        }
    }
    state.psi = psi;
    let order: Vec<usize> = (0..slots.len()).collect();
    let mut crng = rng.stream(Domain::Policy, t, CONTENTION);
    prioritized_over_slots(queue, slots, &order, sys, &mut crng, None)
}

/// Algorithm 3 preprocessing: for each depth, the distinct skill sets split
/// into groups of successive inclusion-maximal elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityClasses {
    /// `depths[d - 1][p]` is group `L^d_{p+1}`.
    pub depths: Vec<Vec<Vec<BTreeSet<usize>>>>,
}

/// Repeatedly extracts all inclusion-maximal sets from the remaining
/// collection.
pub fn maximal_layers(sets: &[BTreeSet<usize>]) -> Vec<Vec<BTreeSet<usize>>> {
    let mut rest: Vec<BTreeSet<usize>> = sets.to_vec();
    rest.sort();
    rest.dedup();
    let mut layers = Vec::new();
    while !rest.is_empty() {
        let (top, below): (Vec<_>, Vec<_>) = rest.iter().cloned().partition(|a| {
            !rest.iter().any(|b| b != a && a.is_subset(b))
        });
        layers.push(top);
        rest = below;
    }
    layers
}

pub fn build_priority_classes(sys: &ValidatedSystem) -> PriorityClasses {
    let depths = flats_by_depth(sys)
        .into_iter()
        .map(|class| {
            let sets: Vec<BTreeSet<usize>> = class
                .iter()
                .map(|&f| sys.step(f).skills().iter().copied().collect())
                .collect();
            maximal_layers(&sets)
        })
        .collect();
    PriorityClasses { depths }
}

/// Binds whole step instances to single agents tried in `order`.
fn bind_whole(
    slots: &mut [AgentSlot],
    order: &[usize],
    sys: &ValidatedSystem,
    flat: usize,
    inst: StepInstance,
) -> Option<Vec<Assignment>> {
    let step = sys.step(flat);
    let a = order.iter().copied().find(|&a| slots[a].fits_whole(sys, step))?;
    let mut out = Vec::new();
    slots[a].commit_whole(step, inst, &mut out);
    Some(out)
}

/// Algorithm 3 for (F,I): depths, then priority groups, each step instance
/// bound to the least capable agent that covers it.
pub fn restricted_greedy(
    classes: &PriorityClasses,
    queue: &QueueState,
    avail: &Availability,
    sys: &ValidatedSystem,
    rng: &Rng,
    t: u64,
) -> Allocation {
    let mut slots = agent_slots(avail, sys);
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by_key(|&a| (sys.agent_types()[slots[a].id.agent_type].skills.len(), a));
    let mut crng = rng.stream(Domain::Policy, t, CONTENTION);
    let mut alloc = Allocation::empty(sys);
    let mut failed = vec![false; sys.num_step_types()];
    for (d, class) in flats_by_depth(sys).into_iter().enumerate() {
        for group in &classes.depths[d] {
            let flats: Vec<usize> = class
                .iter()
                .copied()
                .filter(|&f| group.iter().any(|g| g.iter().copied().eq(sys.step(f).skills().iter().copied())))
                .collect();
            let cands = contention_order(&flats, queue, &mut crng, |f| serviceable(sys, &slots, f));
            greedy_pass(&cands, sys, &mut alloc, &mut failed, |flat, inst| {
                bind_whole(&mut slots, &order, sys, flat, inst)
            });
        }
    }
    alloc
}

/// The simplified trace-study policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgoVariant {
    /// Depth-prioritized greedy with random agent order; a substep is split
    /// across agents when no single agent can take it whole.
    Algo1,
    /// As `Algo1`, but every substep is served whole by one agent.
    Algo2,
    /// Step types by decreasing skill-set size, each bound to one agent.
    Algo3,
}

impl AlgoVariant {
    pub fn regime(self) -> Regime {
        match self {
            AlgoVariant::Algo1 | AlgoVariant::Algo2 => Regime::FF,
            AlgoVariant::Algo3 => Regime::FI,
        }
    }
}

pub fn algo_variants(
    variant: AlgoVariant,
    queue: &QueueState,
    avail: &Availability,
    sys: &ValidatedSystem,
    rng: &Rng,
    t: u64,
) -> Allocation {
    let mut slots = agent_slots(avail, sys);
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng.stream(Domain::Policy, t, AGENT_ORDER));
    let mut crng = rng.stream(Domain::Policy, t, CONTENTION);
    match variant {
        AlgoVariant::Algo1 => prioritized_over_slots(queue, slots, &order, sys, &mut crng, Some(true)),
        AlgoVariant::Algo2 => prioritized_over_slots(queue, slots, &order, sys, &mut crng, Some(false)),
        AlgoVariant::Algo3 => {
            let mut alloc = Allocation::empty(sys);
            let mut failed = vec![false; sys.num_step_types()];
            let mut by_size: Vec<usize> = (0..sys.num_step_types()).collect();
            by_size.sort_by_key(|&f| std::cmp::Reverse(sys.step(f).skills().len()));
            let mut start = 0;
            while start < by_size.len() {
                let size = sys.step(by_size[start]).skills().len();
                let end = by_size[start..]
                    .iter()
                    .position(|&f| sys.step(f).skills().len() != size)
                    .map_or(by_size.len(), |p| start + p);
                let group = &by_size[start..end];
                let cands = contention_order(group, queue, &mut crng, |f| serviceable(sys, &slots, f));
                greedy_pass(&cands, sys, &mut alloc, &mut failed, |flat, inst| {
                    bind_whole(&mut slots, &order, sys, flat, inst)
                });
                start = end;
            }
            alloc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::check_allocation;
    use crate::fixtures::{t1, t2};
    use crate::model::*;
    use std::collections::BTreeMap;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn prioritized_greedy_on_t1() {
        let sys = t1();
        let avail = Availability::new(vec![1, 1]);
        let rng = Rng::new(1);
        let q = QueueState::from_counts(&sys, &[1, 1]);
        let alloc = prioritized_greedy(&q, &avail, &sys, &rng, 1);
        assert_eq!(alloc.counts, vec![1, 1]);
        check_allocation(Regime::IF, &alloc, &avail, &sys).unwrap();
        let skill0 = alloc.assignments.iter().find(|a| a.step.step == 0).unwrap();
        assert_eq!(skill0.agent.agent_type, 0);

        let q = QueueState::from_counts(&sys, &[2, 0]);
        assert_eq!(prioritized_greedy(&q, &avail, &sys, &rng, 1).counts, vec![2, 0]);
        let none = prioritized_greedy(&q, &Availability::new(vec![0, 0]), &sys, &rng, 1);
        assert_eq!(none.total_steps(), 0);
    }

    #[test]
    fn flex_greedy_psi_on_t2() {
        let sys = t2();
        let psi = tagging_probabilities(&[1.0], &[2.0], 0.05, &sys).unwrap();
        for s in 0..2 {
            assert!(0.5 <= 0.95 * 2.0 * psi[0][s] + 1e-9, "{psi:?}");
        }
        assert!(psi[0].iter().sum::<f64>() <= 1.0 + 1e-9);
        assert!(tagging_probabilities(&[1.0], &[0.0], 0.05, &sys).is_none());
    }

    #[test]
    fn flex_greedy_first_update_overwrites() {
        let sys = t2();
        let mut st = FlexGreedyState::new(&sys, 0.05, GammaSchedule::Harmonic);
        assert_eq!(st.abar, vec![1.0]);
        st.update(&[3], &Availability::new(vec![5]));
        assert_eq!(st.abar, vec![3.0]);
        assert_eq!(st.ubar, vec![5.0]);
        st.update(&[1], &Availability::new(vec![1]));
        assert_eq!(st.abar, vec![2.0]);
    }

    #[test]
    fn flex_greedy_falls_back_without_agents() {
        let sys = t2();
        let mut st = FlexGreedyState::new(&sys, 0.05, GammaSchedule::Harmonic);
        let q = QueueState::from_counts(&sys, &[3, 0]);
        let avail = Availability::new(vec![0]);
        let alloc = flex_greedy(&mut st, &q, &[1], &avail, &sys, &Rng::new(3), 1);
        assert!(st.fallback);
        assert!((st.psi[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(alloc.total_steps(), 0);
    }

    #[test]
    fn flex_greedy_allocates_with_tags() {
        let sys = t2();
        let mut st = FlexGreedyState::new(&sys, 0.05, GammaSchedule::Harmonic);
        let avail = Availability::new(vec![4]);
        let q = QueueState::from_counts(&sys, &[2, 2]);
        let alloc = flex_greedy(&mut st, &q, &[1], &avail, &sys, &Rng::new(3), 1);
        assert!(!st.fallback);
        check_allocation(Regime::FF, &alloc, &avail, &sys).unwrap();
        // every agent serves a single skill
        for a in &alloc.assignments {
            assert!(alloc
                .assignments
                .iter()
                .filter(|b| b.agent == a.agent)
                .all(|b| b.skill == a.skill));
        }
    }

    #[test]
    fn priority_layers() {
        let l = maximal_layers(&[set(&[0, 1]), set(&[0]), set(&[1])]);
        assert_eq!(l, vec![vec![set(&[0, 1])], vec![set(&[0]), set(&[1])]]);
        let l = maximal_layers(&[set(&[2]), set(&[2])]);
        assert_eq!(l, vec![vec![set(&[2])]]);
        let l = maximal_layers(&[set(&[0]), set(&[1]), set(&[2])]);
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].len(), 3);
    }

    fn restricted_sys() -> ValidatedSystem {
        let agent = |skills: Vec<usize>| AgentTypeConfig {
            skills,
            hours: Some(1.0),
            skill_hours: None,
            availability: None,
        };
        let task = |step: BTreeMap<usize, f64>| TaskTypeConfig {
            steps: vec![step],
            parent: None,
            rate: None,
            arrivals: None,
        };
        let cfg = SystemConfig {
            skills: 2,
            regime: Regime::FI,
            agent_types: vec![agent(vec![0]), agent(vec![0, 1])],
            task_types: vec![
                task(BTreeMap::from([(0, 0.6)])),
                task(BTreeMap::from([(0, 0.3), (1, 0.3)])),
            ],
        };
        validate_config(&cfg).unwrap()
    }

    #[test]
    fn restricted_greedy_keeps_capable_agent_for_big_sets() {
        let sys = restricted_sys();
        let classes = build_priority_classes(&sys);
        assert_eq!(classes.depths[0], vec![vec![set(&[0, 1])], vec![set(&[0])]]);
        let avail = Availability::new(vec![1, 1]);
        let q = QueueState::from_counts(&sys, &[1, 1]);
        let alloc = restricted_greedy(&classes, &q, &avail, &sys, &Rng::new(0), 1);
        assert_eq!(alloc.counts, vec![1, 1]);
        for a in &alloc.assignments {
            let want = if a.step.task == 1 { 1 } else { 0 };
            assert_eq!(a.agent.agent_type, want);
        }
        check_allocation(Regime::FI, &alloc, &avail, &sys).unwrap();
        let none = restricted_greedy(&classes, &q, &Availability::new(vec![0, 0]), &sys, &Rng::new(0), 1);
        assert_eq!(none.total_steps(), 0);
    }

    #[test]
    fn restricted_greedy_leaves_uncoverable_steps() {
        let sys = restricted_sys();
        let classes = build_priority_classes(&sys);
        // only the single-skill agent shows up
        let avail = Availability::new(vec![3, 0]);
        let q = QueueState::from_counts(&sys, &[0, 2]);
        let alloc = restricted_greedy(&classes, &q, &avail, &sys, &Rng::new(0), 1);
        assert_eq!(alloc.counts, vec![0, 0]);
    }

    fn one_skill_flexible(step: f64, agents: f64) -> ValidatedSystem {
        let cfg = SystemConfig {
            skills: 1,
            regime: Regime::FF,
            agent_types: vec![AgentTypeConfig {
                skills: vec![0],
                hours: Some(agents),
                skill_hours: None,
                availability: None,
            }],
            task_types: vec![TaskTypeConfig {
                steps: vec![BTreeMap::from([(0, step)])],
                parent: None,
                rate: None,
                arrivals: None,
            }],
        };
        validate_config(&cfg).unwrap()
    }

    #[test]
    fn algo1_splits_where_algo2_cannot() {
        let sys = one_skill_flexible(0.8, 0.5);
        let avail = Availability::new(vec![2]);
        let q = QueueState::from_counts(&sys, &[1]);
        let rng = Rng::new(5);
        let a1 = algo_variants(AlgoVariant::Algo1, &q, &avail, &sys, &rng, 1);
        let a2 = algo_variants(AlgoVariant::Algo2, &q, &avail, &sys, &rng, 1);
        assert_eq!(a1.counts, vec![1]);
        assert_eq!(a2.counts, vec![0]);
        let mut hours: Vec<f64> = a1.assignments.iter().map(|a| a.hours).collect();
        hours.sort_by(f64::total_cmp);
        assert!((hours[0] - 0.3).abs() < 1e-12 && (hours[1] - 0.5).abs() < 1e-12);
        check_allocation(Regime::FF, &a1, &avail, &sys).unwrap();
    }

    #[test]
    fn algo1_equals_algo2_when_no_split_needed() {
        let sys = one_skill_flexible(0.2, 1.0);
        let avail = Availability::new(vec![3]);
        let q = QueueState::from_counts(&sys, &[20]);
        let rng = Rng::new(5);
        let a1 = algo_variants(AlgoVariant::Algo1, &q, &avail, &sys, &rng, 1);
        let a2 = algo_variants(AlgoVariant::Algo2, &q, &avail, &sys, &rng, 1);
        assert_eq!(a1.counts, a2.counts);
    }

    #[test]
    fn algo3_serves_two_skill_step_first() {
        let agent = AgentTypeConfig {
            skills: vec![0, 1],
            hours: Some(1.0),
            skill_hours: None,
            availability: None,
        };
        let task = |step: BTreeMap<usize, f64>| TaskTypeConfig {
            steps: vec![step],
            parent: None,
            rate: None,
            arrivals: None,
        };
        let cfg = SystemConfig {
            skills: 2,
            regime: Regime::FI,
            agent_types: vec![agent],
            task_types: vec![
                task(BTreeMap::from([(0, 0.6)])),
                task(BTreeMap::from([(0, 0.3), (1, 0.3)])),
            ],
        };
        let sys = validate_config(&cfg).unwrap();
        let avail = Availability::new(vec![1]);
        let q = QueueState::from_counts(&sys, &[1, 1]);
        let alloc = algo_variants(AlgoVariant::Algo3, &q, &avail, &sys, &Rng::new(2), 1);
        assert_eq!(alloc.counts, vec![0, 1]);
        check_allocation(Regime::FI, &alloc, &avail, &sys).unwrap();
    }
}
