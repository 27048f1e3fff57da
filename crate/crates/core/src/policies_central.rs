//! Centralized max-weight allocation: back-pressure weights, exact
//! enumeration, LP relaxations for (I,F) and (F,F), and the per-agent
//! knapsack decomposition for (F,I).

use crate::constraints::{Allocation, Availability};
use crate::error::{Error, Result};
use crate::linprog::{solve_lp, LpProblem, LpSolution, LpStatus};
use crate::model::{Regime, ValidatedSystem};
use crate::packing::Packer;

/// Largest enumeration product accepted by [`centralized_exact`].
pub const EXACT_CAP: u64 = 1_000_000;

/// Knapsack sizes are hours times this scale.
pub const KNAPSACK_SCALE: f64 = 1e4;

/// Back-pressure weight of each step type:
/// `w_{j,k} = sum_{r in children(k)} l_{j,r} (Q_{j,k} - Q_{j,r})`.
/// Leaves get exactly 0.
pub fn backpressure_weights(q: &[u64], sys: &ValidatedSystem) -> Vec<f64> {
    let mut w = vec![0.0; sys.num_step_types()];
    for (j, task) in sys.task_types().iter().enumerate() {
        let base = sys.task_offset(j);
        for k in 0..task.steps.len() {
            let qk = q[base + k] as f64;
            w[base + k] = task
                .tree
                .children(k)
                .iter()
                .map(|&r| task.tree.leaves(r) as f64 * (qk - q[base + r] as f64))
                .sum();
        }
    }
    w
}

/// Weights with negatives replaced by 0.
pub fn clamped_weights(q: &[u64], sys: &ValidatedSystem) -> Vec<f64> {
    backpressure_weights(q, sys)
        .into_iter()
        .map(|x| x.max(0.0))
        .collect()
}

/// Adds queued steps while they fit: positive weights by decreasing weight,
/// then zero weights by decreasing queue length.
pub fn fill(packer: &mut Packer<'_>, w: &[f64], q: &[u64]) {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = w[a] > 0.0;
        let pb = w[b] > 0.0;
        pb.cmp(&pa)
            .then(w[b].total_cmp(&w[a]))
            .then(q[b].cmp(&q[a]))
            .then(a.cmp(&b))
    });
    for flat in order {
        while packer.counts()[flat] < q[flat] && packer.try_add(flat) {}
    }
}

fn require(policy: &str, sys: &ValidatedSystem, regime: Regime) -> Result<()> {
    if sys.regime() != regime {
        return Err(Error::UnsupportedRegime {
            policy: policy.into(),
            required: regime.to_string(),
            actual: sys.regime(),
        });
    }
    Ok(())
}

/// Exact max-weight allocation by enumeration, followed by the fill.
pub fn centralized_exact(q: &[u64], avail: &Availability, sys: &ValidatedSystem) -> Result<Allocation> {
    exact_with_weights(q, &clamped_weights(q, sys), avail, sys)
}

/// Maximizes `sum w s` over the regime's allocation set with `s <= q` by
/// enumerating every feasible count vector of the positive-weight step types.
pub fn exact_with_weights(
    q: &[u64],
    w: &[f64],
    avail: &Availability,
    sys: &ValidatedSystem,
) -> Result<Allocation> {
    let regime = sys.regime();
    let n = sys.num_step_types();
    let types: Vec<usize> = (0..n).filter(|&f| w[f] > 0.0 && q[f] > 0).collect();
    let mut counts = vec![0u64; n];
    let mut max_c = Vec::with_capacity(types.len());
    let mut product: u64 = 1;
    for &f in &types {
        let mut c = 0;
        while c < q[f] {
            counts[f] = c + 1;
            if !crate::packing::counts_feasible(regime, &counts, avail, sys)? {
                break;
            }
            c += 1;
        }
        counts[f] = 0;
        max_c.push(c);
        product = product.saturating_mul(c + 1);
        if product > EXACT_CAP {
            return Err(Error::Intractable(format!(
                "enumeration product exceeds {EXACT_CAP} over {} step types",
                types.len()
            )));
        }
    }
    let mut best = (0.0, vec![0u64; n]);
    let mut search = ExactSearch {
        types: &types,
        max_c: &max_c,
        w,
        avail,
        sys,
        regime,
    };
    search.run(0, &mut counts, 0.0, &mut best)?;
    let mut packer = Packer::with_counts(regime, &best.1, avail, sys)?
        .ok_or_else(|| Error::InfeasibleAllocation("exact optimum lost its witness".into()))?;
    fill(&mut packer, w, q);
    packer.finish()
}

struct ExactSearch<'a> {
    types: &'a [usize],
    max_c: &'a [u64],
    w: &'a [f64],
    avail: &'a Availability,
    sys: &'a ValidatedSystem,
    regime: Regime,
}

impl ExactSearch<'_> {
    fn run(&mut self, i: usize, counts: &mut Vec<u64>, value: f64, best: &mut (f64, Vec<u64>)) -> Result<()> {
        if i == self.types.len() {
            if value > best.0 {
                *best = (value, counts.clone());
            }
            return Ok(());
        }
        let f = self.types[i];
        for c in 0..=self.max_c[i] {
            counts[f] = c;
            if c > 0 && !crate::packing::counts_feasible(self.regime, counts, self.avail, self.sys)? {
                break;
            }
            self.run(i + 1, counts, value + c as f64 * self.w[f], best)?;
        }
        counts[f] = 0;
        Ok(())
    }
}

/// The (I,F) relaxation: `max sum w s` subject to per-skill hours and
/// `0 <= s <= q`.
pub fn lp_if_relaxation(q: &[u64], w: &[f64], avail: &Availability, sys: &ValidatedSystem) -> LpSolution {
    let n = sys.num_step_types();
    let hours = crate::constraints::aggregate_hours(avail, sys).per_skill;
    let mut p = LpProblem::new(w.to_vec());
    for (s, &h) in hours.iter().enumerate() {
        let row: Vec<f64> = (0..n).map(|f| sys.step(f).hours_of(s)).collect();
        if row.iter().any(|&x| x > 0.0) {
            p.le(row, h);
        }
    }
    for (f, &qf) in q.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[f] = 1.0;
        p.le(row, qf as f64);
    }
    solve_lp(&p)
}

/// The (F,F) relaxation over `(s, alpha)`: each agent type splits its time
/// fractions `alpha_{m,s}` across its skills.
pub fn lp_ff_relaxation(q: &[u64], w: &[f64], avail: &Availability, sys: &ValidatedSystem) -> LpSolution {
    let n = sys.num_step_types();
    let s_count = sys.num_skills();
    // alpha variables only for possessed skills
    let mut alpha = Vec::new();
    for (m, a) in sys.agent_types().iter().enumerate() {
        for s in a.skills.iter() {
            alpha.push((m, s.0));
        }
    }
    let nv = n + alpha.len();
    let mut c = w.to_vec();
    c.resize(nv, 0.0);
    let mut p = LpProblem::new(c);
    for m in 0..sys.num_agent_types() {
        let mut row = vec![0.0; nv];
        for (i, &(mm, _)) in alpha.iter().enumerate() {
            if mm == m {
                row[n + i] = 1.0;
            }
        }
        p.le(row, 1.0);
    }
    for s in 0..s_count {
        let mut row = vec![0.0; nv];
        for (f, x) in row.iter_mut().enumerate().take(n) {
            *x = sys.step(f).hours_of(s);
        }
        for (i, &(m, ss)) in alpha.iter().enumerate() {
            if ss == s {
                row[n + i] = -(avail.counts[m] as f64) * sys.agent_types()[m].flexible_hours();
            }
        }
        p.le(row, 0.0);
    }
    for (f, &qf) in q.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[f] = 1.0;
        p.le(row, qf as f64);
    }
    solve_lp(&p)
}

fn floor_counts<'a>(
    sol: &LpSolution,
    q: &[u64],
    avail: &'a Availability,
    sys: &'a ValidatedSystem,
) -> Result<Packer<'a>> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::InfeasibleAllocation(format!("relaxation is {:?}", sol.status)));
    }
    let n = sys.num_step_types();
    let nudged: Vec<u64> = (0..n)
        .map(|f| ((sol.x[f] + 1e-7).floor().max(0.0) as u64).min(q[f]))
        .collect();
    if let Some(p) = Packer::with_counts(sys.regime(), &nudged, avail, sys)? {
        return Ok(p);
    }
    let plain: Vec<u64> = (0..n)
        .map(|f| (sol.x[f].floor().max(0.0) as u64).min(q[f]))
        .collect();
    Packer::with_counts(sys.regime(), &plain, avail, sys)?
        .ok_or_else(|| Error::InfeasibleAllocation("floored relaxation has no witness".into()))
}

/// LP relaxation for (I,F), floored, then filled.
pub fn centralized_lp_if(q: &[u64], avail: &Availability, sys: &ValidatedSystem) -> Result<Allocation> {
    require("lp-if", sys, Regime::IF)?;
    let w = clamped_weights(q, sys);
    let sol = lp_if_relaxation(q, &w, avail, sys);
    let mut packer = floor_counts(&sol, q, avail, sys)?;
    fill(&mut packer, &w, q);
    packer.finish()
}

/// LP relaxation for (F,F), floored, then filled.
pub fn centralized_lp_ff(q: &[u64], avail: &Availability, sys: &ValidatedSystem) -> Result<Allocation> {
    require("lp-ff", sys, Regime::FF)?;
    let w = clamped_weights(q, sys);
    let sol = lp_ff_relaxation(q, &w, avail, sys);
    let mut packer = floor_counts(&sol, q, avail, sys)?;
    fill(&mut packer, &w, q);
    packer.finish()
}

/// Bounded knapsack over integer sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub values: Vec<f64>,
    pub sizes: Vec<u64>,
    pub bounds: Vec<u64>,
    pub capacity: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub counts: Vec<u64>,
    pub value: f64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact bounded knapsack by dynamic programming over capacity. Among
/// optimal solutions, lower item indices are preferred.
pub fn knapsack_agent(inst: &KnapsackInstance) -> KnapsackSolution {
    let n = inst.values.len();
    // a common divisor of the sizes shrinks the table without changing the
    // feasible set
    let g = inst.sizes.iter().fold(0, |g, &s| gcd(g, s)).max(1);
    let sizes: Vec<u64> = inst.sizes.iter().map(|s| s / g).collect();
    let cap = (inst.capacity / g) as usize;
    // best[i][c]: optimum over items < i within capacity c
    let mut best = vec![vec![0.0f64; cap + 1]; n + 1];
    for i in 0..n {
        let (v, s, b) = (inst.values[i], sizes[i] as usize, inst.bounds[i]);
        for c in 0..=cap {
            let mut top = best[i][c];
            if s > 0 {
                let mut z = 1u64;
                while z <= b && z as usize * s <= c {
                    let cand = best[i][c - z as usize * s] + z as f64 * v;
                    if cand > top {
                        top = cand;
                    }
                    z += 1;
                }
            } else if b > 0 && v > 0.0 {
                top += b as f64 * v;
            }
            best[i + 1][c] = top;
        }
    }
    let mut counts = vec![0u64; n];
    let mut c = cap;
    for i in (0..n).rev() {
        let target = best[i + 1][c];
        let (v, s, b) = (inst.values[i], sizes[i] as usize, inst.bounds[i]);
        if s == 0 {
            if b > 0 && v > 0.0 {
                counts[i] = b;
            }
            continue;
        }
        let mut z = 0u64;
        while z <= b && z as usize * s <= c {
            if (best[i][c - z as usize * s] + z as f64 * v - target).abs() <= 1e-9 * (1.0 + target.abs()) {
                break;
            }
            z += 1;
        }
        counts[i] = z;
        c -= z as usize * s;
    }
    KnapsackSolution {
        counts,
        value: best[n][cap],
    }
}

/// Hours to knapsack units, rounding the size up.
pub fn scale_size(hours: f64) -> u64 {
    (hours * KNAPSACK_SCALE - 1e-6).ceil().max(1.0) as u64
}

/// Hours to knapsack units, rounding the capacity down.
pub fn scale_capacity(hours: f64) -> u64 {
    (hours * KNAPSACK_SCALE + 1e-6).floor().max(0.0) as u64
}

/// (F,I) decomposition: one knapsack per available agent in (type, index)
/// order, each taking from what earlier agents left, then the fill.
pub fn centralized_fi(q: &[u64], avail: &Availability, sys: &ValidatedSystem) -> Result<Allocation> {
    require("fi-decomp", sys, Regime::FI)?;
    fi_with_weights(q, &clamped_weights(q, sys), avail, sys)
}

pub fn fi_with_weights(
    q: &[u64],
    w: &[f64],
    avail: &Availability,
    sys: &ValidatedSystem,
) -> Result<Allocation> {
    let mut packer = Packer::new(sys.regime(), avail, sys);
    let mut remaining = q.to_vec();
    for i in 0..packer.num_slots() {
        let slot = packer.slot(i).expect("slot exists").clone();
        let spec = &sys.agent_types()[slot.id.agent_type];
        let items: Vec<usize> = (0..sys.num_step_types())
            .filter(|&f| w[f] > 0.0 && remaining[f] > 0 && spec.covers(sys.step(f).skills()))
            .collect();
        if items.is_empty() {
            continue;
        }
        let inst = KnapsackInstance {
            values: items.iter().map(|&f| w[f]).collect(),
            sizes: items.iter().map(|&f| scale_size(sys.step(f).total())).collect(),
            bounds: items.iter().map(|&f| remaining[f]).collect(),
            capacity: scale_capacity(slot.total_remaining()),
        };
        let sol = knapsack_agent(&inst);
        for (&f, &z) in items.iter().zip(&sol.counts) {
            for _ in 0..z {
                if !packer.place_on(i, f) {
                    return Err(Error::InfeasibleAllocation(format!(
                        "knapsack choice for agent {:?} does not fit",
                        slot.id
                    )));
                }
            }
            remaining[f] -= z;
        }
    }
    fill(&mut packer, w, q);
    packer.finish()
}
