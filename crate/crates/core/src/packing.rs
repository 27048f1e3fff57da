//! Witness construction: turning step counts into explicit agent assignments.
//!
//! Policies decide counts; this module decides whether counts are feasible
//! for a regime and, if so, which agent serves what.

use crate::constraints::{AgentId, Allocation, Assignment, Availability, StepInstance};
use crate::error::{Error, Result};
use crate::model::{AgentHours, Regime, StepSpec, ValidatedSystem};

/// Slack allowed when testing whether a requirement fits in a remaining
/// budget. Far below the checker tolerance, so accumulated overshoot stays
/// invisible to [`crate::constraints::check_allocation`].
pub const FIT_TOL: f64 = 1e-10;

/// Search-node limit for exact bin packing of inflexible steps.
pub const PACK_NODE_LIMIT: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Budget {
    /// Flexible agent: one pool usable for any possessed skill.
    Total(f64),
    /// Per-skill hours; zero for skills the agent lacks.
    PerSkill(Vec<f64>),
}

/// Remaining hours of one available agent instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSlot {
    pub id: AgentId,
    pub budget: Budget,
}

/// One slot per available agent, ordered by type then index.
pub fn agent_slots(avail: &Availability, sys: &ValidatedSystem) -> Vec<AgentSlot> {
    avail
        .agents()
        .map(|id| AgentSlot {
            id,
            budget: match &sys.agent_types()[id.agent_type].hours {
                AgentHours::Flexible(h) => Budget::Total(*h),
                AgentHours::Inflexible(hs) => Budget::PerSkill(hs.clone()),
            },
        })
        .collect()
}

impl AgentSlot {
    fn has_skill(&self, sys: &ValidatedSystem, s: usize) -> bool {
        sys.agent_types()[self.id.agent_type].has_skill(s)
    }

    /// Hours still usable for skill `s`.
    pub fn available(&self, sys: &ValidatedSystem, s: usize) -> f64 {
        if !self.has_skill(sys, s) {
            return 0.0;
        }
        match &self.budget {
            Budget::Total(h) => h.max(0.0),
            Budget::PerSkill(hs) => hs[s].max(0.0),
        }
    }

    pub fn consume(&mut self, s: usize, hours: f64) {
        match &mut self.budget {
            Budget::Total(h) => *h -= hours,
            Budget::PerSkill(hs) => hs[s] -= hours,
        }
    }

    /// Total hours left across skills.
    pub fn total_remaining(&self) -> f64 {
        match &self.budget {
            Budget::Total(h) => h.max(0.0),
            Budget::PerSkill(hs) => hs.iter().map(|h| h.max(0.0)).sum(),
        }
    }

    /// Can this agent serve the whole step on its own?
    pub fn fits_whole(&self, sys: &ValidatedSystem, step: &StepSpec) -> bool {
        if !sys.agent_types()[self.id.agent_type].covers(step.skills()) {
            return false;
        }
        match &self.budget {
            Budget::Total(h) => step.total() <= h + FIT_TOL,
            Budget::PerSkill(hs) => step
                .skills()
                .iter()
                .all(|&s| step.hours_of(s) <= hs[s] + FIT_TOL),
        }
    }

    /// Binds a whole step instance to this agent.
    pub fn commit_whole(
        &mut self,
        step: &StepSpec,
        inst: StepInstance,
        out: &mut Vec<Assignment>,
    ) {
        for &s in step.skills() {
            let h = step.hours_of(s);
            self.consume(s, h);
            out.push(Assignment {
                agent: self.id,
                step: inst,
                skill: s,
                hours: h,
            });
        }
    }

    fn same_state(&self, other: &AgentSlot) -> bool {
        if self.id.agent_type != other.id.agent_type {
            return false;
        }
        match (&self.budget, &other.budget) {
            (Budget::Total(a), Budget::Total(b)) => (a - b).abs() <= 1e-12,
            (Budget::PerSkill(a), Budget::PerSkill(b)) => {
                a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
            }
            _ => false,
        }
    }
}

/// Covers one flexible step instance from several agents, skill by skill,
/// drawing on agents in `order`. With `atomic` each substep must come whole
/// from one agent. On failure nothing is consumed.
pub fn split_cover(
    slots: &mut [AgentSlot],
    order: &[usize],
    sys: &ValidatedSystem,
    flat: usize,
    inst: StepInstance,
    atomic: bool,
) -> Option<Vec<Assignment>> {
    let step = sys.step(flat);
    let mut out = Vec::new();
    let mut undo: Vec<(usize, usize, f64)> = Vec::new();
    let mut ok = true;
    'skills: for &s in step.skills() {
        let mut need = step.hours_of(s);
        for &a in order {
            let have = slots[a].available(sys, s);
            if atomic {
                if need <= have + FIT_TOL {
                    slots[a].consume(s, need);
                    undo.push((a, s, need));
                    out.push(Assignment {
                        agent: slots[a].id,
                        step: inst,
                        skill: s,
                        hours: need,
                    });
                    continue 'skills;
                }
            } else if have > 0.0 {
                let take = have.min(need);
                slots[a].consume(s, take);
                undo.push((a, s, take));
                out.push(Assignment {
                    agent: slots[a].id,
                    step: inst,
                    skill: s,
                    hours: take,
                });
                need -= take;
                if need <= FIT_TOL {
                    continue 'skills;
                }
            }
        }
        ok = false;
        break;
    }
    if ok {
        Some(out)
    } else {
        for (a, s, h) in undo {
            slots[a].consume(s, -h);
        }
        None
    }
}

/// Max flow from agent types to skills: how many hours each flexible agent
/// type gives to each skill so that `demand` is met. `None` when it cannot.
pub fn transport(
    demand: &[f64],
    avail: &Availability,
    sys: &ValidatedSystem,
) -> Option<Vec<Vec<f64>>> {
    let m_count = sys.num_agent_types();
    let s_count = sys.num_skills();
    // nodes: 0 source, 1..=M types, M+1..=M+S skills, M+S+1 sink
    let n = m_count + s_count + 2;
    let sink = n - 1;
    let mut cap = vec![vec![0.0f64; n]; n];
    for (m, a) in sys.agent_types().iter().enumerate() {
        cap[0][1 + m] = avail.counts[m] as f64 * a.flexible_hours();
        for s in a.skills.iter() {
            cap[1 + m][1 + m_count + s.0] = f64::INFINITY;
        }
    }
    let mut need = 0.0;
    for (s, &d) in demand.iter().enumerate() {
        cap[1 + m_count + s][sink] = d;
        need += d;
    }
    let orig = cap.clone();
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            for w in 0..n {
                if prev[w] == usize::MAX && cap[v][w] > 1e-13 {
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut push = f64::INFINITY;
        let mut w = sink;
        while w != 0 {
            push = push.min(cap[prev[w]][w]);
            w = prev[w];
        }
        let mut w = sink;
        while w != 0 {
            let v = prev[w];
            cap[v][w] -= push;
            cap[w][v] += push;
            w = v;
        }
        total += push;
    }
    if total < need - FIT_TOL * (1.0 + need) {
        return None;
    }
    let mut flow = vec![vec![0.0; s_count]; m_count];
    for (m, row) in flow.iter_mut().enumerate() {
        for (s, x) in row.iter_mut().enumerate() {
            let (v, w) = (1 + m, 1 + m_count + s);
            if orig[v][w].is_infinite() {
                *x = cap[w][v];
            }
        }
    }
    Some(flow)
}

/// Per-skill demand of a count vector.
pub fn skill_demand(counts: &[u64], sys: &ValidatedSystem) -> Vec<f64> {
    let mut d = vec![0.0; sys.num_skills()];
    for (flat, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for &s in sys.step(flat).skills() {
            d[s] += c as f64 * sys.step(flat).hours_of(s);
        }
    }
    d
}

#[derive(Debug, Clone)]
enum State {
    /// Inflexible agents, flexible steps: remaining pooled hours per skill.
    Pooled(Vec<f64>),
    /// Flexible agents, flexible steps: committed demand per skill.
    Transport(Vec<f64>),
    /// Inflexible steps: per-agent budgets and the flats bound to each.
    PerAgent {
        slots: Vec<AgentSlot>,
        placed: Vec<Vec<usize>>,
    },
}

/// Incrementally built feasible allocation for one regime.
#[derive(Debug, Clone)]
pub struct Packer<'a> {
    sys: &'a ValidatedSystem,
    avail: &'a Availability,
    counts: Vec<u64>,
    state: State,
}

impl<'a> Packer<'a> {
    pub fn new(regime: Regime, avail: &'a Availability, sys: &'a ValidatedSystem) -> Self {
        let state = if !regime.flexible_steps() {
            let slots = agent_slots(avail, sys);
            let placed = vec![Vec::new(); slots.len()];
            State::PerAgent { slots, placed }
        } else if regime.flexible_agents() {
            State::Transport(vec![0.0; sys.num_skills()])
        } else {
            State::Pooled(crate::constraints::aggregate_hours(avail, sys).per_skill)
        };
        Packer {
            sys,
            avail,
            counts: vec![0; sys.num_step_types()],
            state,
        }
    }

    /// A packer holding exactly `counts`, or `None` if no witness exists.
    /// Inflexible steps are packed exactly by depth-first search.
    pub fn with_counts(
        regime: Regime,
        counts: &[u64],
        avail: &'a Availability,
        sys: &'a ValidatedSystem,
    ) -> Result<Option<Self>> {
        let mut p = Packer::new(regime, avail, sys);
        match &mut p.state {
            State::Pooled(rem) => {
                let d = skill_demand(counts, sys);
                for (r, x) in rem.iter_mut().zip(&d) {
                    if *x > *r + FIT_TOL {
                        return Ok(None);
                    }
                    *r -= x;
                }
            }
            State::Transport(dem) => {
                let d = skill_demand(counts, sys);
                if transport(&d, avail, sys).is_none() {
                    return Ok(None);
                }
                *dem = d;
            }
            State::PerAgent { slots, placed } => match pack_exact(sys, slots, counts)? {
                None => return Ok(None),
                Some(bins) => {
                    for (item, a) in bins {
                        let step = sys.step(item);
                        for &s in step.skills() {
                            slots[a].consume(s, step.hours_of(s));
                        }
                        placed[a].push(item);
                    }
                }
            },
        }
        p.counts = counts.to_vec();
        Ok(Some(p))
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Adds one instance of step type `flat` if it still fits.
    pub fn try_add(&mut self, flat: usize) -> bool {
        let step = self.sys.step(flat);
        let ok = match &mut self.state {
            State::Pooled(rem) => {
                let fits = step
                    .skills()
                    .iter()
                    .all(|&s| step.hours_of(s) <= rem[s] + FIT_TOL);
                if fits {
                    for &s in step.skills() {
                        rem[s] -= step.hours_of(s);
                    }
                }
                fits
            }
            State::Transport(dem) => {
                let mut d = dem.clone();
                for &s in step.skills() {
                    d[s] += step.hours_of(s);
                }
                let fits = transport(&d, self.avail, self.sys).is_some();
                if fits {
                    *dem = d;
                }
                fits
            }
            State::PerAgent { slots, placed } => {
                match slots.iter().position(|a| a.fits_whole(self.sys, step)) {
                    Some(a) => {
                        for &s in step.skills() {
                            slots[a].consume(s, step.hours_of(s));
                        }
                        placed[a].push(flat);
                        true
                    }
                    None => false,
                }
            }
        };
        if ok {
            self.counts[flat] += 1;
        }
        ok
    }

    /// Remaining budget of agent slot `i`; inflexible steps only.
    pub fn slot(&self, i: usize) -> Option<&AgentSlot> {
        match &self.state {
            State::PerAgent { slots, .. } => slots.get(i),
            _ => None,
        }
    }

    pub fn num_slots(&self) -> usize {
        match &self.state {
            State::PerAgent { slots, .. } => slots.len(),
            _ => 0,
        }
    }

    /// Binds one instance of `flat` to agent slot `i` if it fits there.
    pub fn place_on(&mut self, i: usize, flat: usize) -> bool {
        let step = self.sys.step(flat);
        let State::PerAgent { slots, placed } = &mut self.state else {
            return false;
        };
        if !slots[i].fits_whole(self.sys, step) {
            return false;
        }
        for &s in step.skills() {
            slots[i].consume(s, step.hours_of(s));
        }
        placed[i].push(flat);
        self.counts[flat] += 1;
        true
    }

    /// Builds the witnessed allocation.
    pub fn finish(self) -> Result<Allocation> {
        let sys = self.sys;
        let mut assignments = Vec::new();
        match self.state {
            State::PerAgent { placed, .. } => {
                let mut next = vec![0u64; sys.num_step_types()];
                let fresh = agent_slots(self.avail, sys);
                for (mut slot, flats) in fresh.into_iter().zip(placed) {
                    for flat in flats {
                        let r = sys.step_ref(flat);
                        let inst = StepInstance {
                            task: r.task,
                            step: r.step,
                            ordinal: next[flat],
                        };
                        next[flat] += 1;
                        slot.commit_whole(sys.step(flat), inst, &mut assignments);
                    }
                }
            }
            State::Pooled(_) => {
                let slots = agent_slots(self.avail, sys);
                assignments = split_witness(sys, &self.counts, slots)?;
            }
            State::Transport(_) => {
                let d = skill_demand(&self.counts, sys);
                let flow = transport(&d, self.avail, sys).ok_or_else(|| {
                    Error::InfeasibleAllocation("transport lost feasibility".into())
                })?;
                let slots = self
                    .avail
                    .agents()
                    .map(|id| {
                        let u = self.avail.counts[id.agent_type] as f64;
                        AgentSlot {
                            id,
                            budget: Budget::PerSkill(
                                flow[id.agent_type].iter().map(|x| x / u).collect(),
                            ),
                        }
                    })
                    .collect();
                assignments = split_witness(sys, &self.counts, slots)?;
            }
        }
        Ok(Allocation {
            counts: self.counts,
            assignments,
        })
    }
}

/// First-fit split of all counted instances over per-skill budgets, with one
/// cursor per skill.
fn split_witness(
    sys: &ValidatedSystem,
    counts: &[u64],
    mut slots: Vec<AgentSlot>,
) -> Result<Vec<Assignment>> {
    let mut cursor = vec![0usize; sys.num_skills()];
    let mut out = Vec::new();
    for (flat, &c) in counts.iter().enumerate() {
        let r = sys.step_ref(flat);
        let step = sys.step(flat);
        for ordinal in 0..c {
            let inst = StepInstance {
                task: r.task,
                step: r.step,
                ordinal,
            };
            for &s in step.skills() {
                let mut need = step.hours_of(s);
                while need > FIT_TOL {
                    let Some(slot) = slots.get_mut(cursor[s]) else {
                        if need <= 1e-9 {
                            break;
                        }
                        return Err(Error::InfeasibleAllocation(format!(
                            "witness split ran out of skill {s} hours ({need} short)"
                        )));
                    };
                    let have = slot.available(sys, s);
                    if have <= FIT_TOL {
                        cursor[s] += 1;
                        continue;
                    }
                    let take = have.min(need);
                    slot.consume(s, take);
                    out.push(Assignment {
                        agent: slot.id,
                        step: inst,
                        skill: s,
                        hours: take,
                    });
                    need -= take;
                }
            }
        }
    }
    Ok(out)
}

/// Exact bin packing of the counted inflexible steps into agents. Returns
/// `(flat, slot)` bindings.
fn pack_exact(
    sys: &ValidatedSystem,
    slots: &[AgentSlot],
    counts: &[u64],
) -> Result<Option<Vec<(usize, usize)>>> {
    let mut items: Vec<usize> = Vec::new();
    for (flat, &c) in counts.iter().enumerate() {
        items.extend(std::iter::repeat_n(flat, c as usize));
    }
    if items.is_empty() {
        return Ok(Some(Vec::new()));
    }
    items.sort_by(|&a, &b| {
        sys.step(b)
            .total()
            .total_cmp(&sys.step(a).total())
            .then(a.cmp(&b))
    });
    // cheap necessary conditions first
    for &flat in &items {
        if !slots.iter().any(|a| a.fits_whole(sys, sys.step(flat))) {
            return Ok(None);
        }
    }
    let total: f64 = items.iter().map(|&f| sys.step(f).total()).sum();
    let offered: f64 = slots.iter().map(|a| a.total_remaining()).sum();
    if total > offered + FIT_TOL * items.len() as f64 {
        return Ok(None);
    }
    let mut work = slots.to_vec();
    let mut assign = Vec::with_capacity(items.len());
    let mut nodes = 0u64;
    if dfs(0, &items, sys, &mut work, &mut assign, &mut nodes)? {
        Ok(Some(items.into_iter().zip(assign).collect()))
    } else {
        Ok(None)
    }
}

fn dfs(
    i: usize,
    items: &[usize],
    sys: &ValidatedSystem,
    slots: &mut [AgentSlot],
    assign: &mut Vec<usize>,
    nodes: &mut u64,
) -> Result<bool> {
    if i == items.len() {
        return Ok(true);
    }
    *nodes += 1;
    if *nodes > PACK_NODE_LIMIT {
        return Err(Error::Intractable(format!(
            "bin packing of {} inflexible steps exceeded {PACK_NODE_LIMIT} nodes",
            items.len()
        )));
    }
    let step = sys.step(items[i]);
    // identical items go to non-decreasing slots
    let start = if i > 0 && items[i - 1] == items[i] {
        assign[i - 1]
    } else {
        0
    };
    let mut tried: Vec<usize> = Vec::new();
    for a in start..slots.len() {
        if !slots[a].fits_whole(sys, step) || tried.iter().any(|&b| slots[b].same_state(&slots[a])) {
            continue;
        }
        tried.push(a);
        let saved = slots[a].budget.clone();
        for &s in step.skills() {
            slots[a].consume(s, step.hours_of(s));
        }
        assign.push(a);
        if dfs(i + 1, items, sys, slots, assign, nodes)? {
            return Ok(true);
        }
        assign.pop();
        slots[a].budget = saved;
    }
    Ok(false)
}

/// Whether `counts` admits a witness under `regime`.
pub fn counts_feasible(
    regime: Regime,
    counts: &[u64],
    avail: &Availability,
    sys: &ValidatedSystem,
) -> Result<bool> {
    Ok(Packer::with_counts(regime, counts, avail, sys)?.is_some())
}
