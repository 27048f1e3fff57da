//! Small-instance ground truth for the capacity region: the allocation sets
//! `C(u)`, hull membership against `lambda^E`, boundary search along rays,
//! and the necessary outer bounds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constraints::Availability;
use crate::error::{Error, Result};
use crate::linprog::{feasible, solve_lp, LpProblem, LpStatus};
use crate::model::{Regime, ValidatedSystem};
use crate::packing::counts_feasible;
use crate::processes::GammaTable;

pub const DEFAULT_CAP: u64 = 1_000_000;
/// Margins within this distance of zero are reported as boundary.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Inside certificates must reconstruct `lambda^E` to this accuracy.
pub const CERTIFICATE_TOL: f64 = 1e-7;

/// Maximal elements of `C(u)` for one availability vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationSet {
    pub u: Vec<u64>,
    pub maximal: Vec<Vec<u64>>,
}

impl AllocationSet {
    /// Whether `a` is dominated by some maximal element.
    pub fn contains(&self, a: &[u64]) -> bool {
        self.maximal
            .iter()
            .any(|m| m.iter().zip(a).all(|(x, y)| y <= x))
    }
}

/// Enumerates the maximal integer step-count vectors that admit a witness
/// under the system's regime, with unbounded supply of every step type.
pub fn enumerate_allocations(u: &Availability, sys: &ValidatedSystem, cap: u64) -> Result<AllocationSet> {
    let regime = sys.regime();
    let n = sys.num_step_types();
    let mut probe = vec![0u64; n];
    let bound = (0..n)
        .map(|f| single_type_max(f, &mut probe, regime, u, sys))
        .collect::<Result<Vec<u64>>>()?;
    let lattice = bound.iter().fold(1f64, |acc, &b| acc * (b as f64 + 1.0));
    if lattice > cap as f64 {
        return Err(Error::Intractable(format!(
            "allocation lattice of u = {:?} has {lattice:.3e} points, cap is {cap}",
            u.counts
        )));
    }
    let mut e = Enumerator {
        sys,
        regime,
        u,
        bound,
        maximal: Vec::new(),
    };
    let mut counts = vec![0u64; n];
    if n > 0 {
        e.walk(0, &mut counts)?;
    } else {
        e.maximal.push(Vec::new());
    }
    Ok(AllocationSet {
        u: u.counts.clone(),
        maximal: e.maximal,
    })
}

/// Largest count of step type `f` alone, by doubling then bisection.
fn single_type_max(
    f: usize,
    probe: &mut [u64],
    regime: Regime,
    u: &Availability,
    sys: &ValidatedSystem,
) -> Result<u64> {
    let mut fits = |c: u64| -> Result<bool> {
        probe[f] = c;
        let ok = counts_feasible(regime, probe, u, sys);
        probe[f] = 0;
        ok
    };
    let (mut lo, mut hi) = (0u64, 1u64);
    while fits(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::Intractable("unbounded step count".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

struct Enumerator<'a> {
    sys: &'a ValidatedSystem,
    regime: Regime,
    u: &'a Availability,
    bound: Vec<u64>,
    maximal: Vec<Vec<u64>>,
}

impl Enumerator<'_> {
    fn feasible(&self, counts: &[u64]) -> Result<bool> {
        counts_feasible(self.regime, counts, self.u, self.sys)
    }

    fn walk(&mut self, i: usize, counts: &mut Vec<u64>) -> Result<()> {
        let last = i + 1 == counts.len();
        if last {
            // only the largest feasible last coordinate can be maximal
            let mut c = 0;
            while c < self.bound[i] {
                counts[i] = c + 1;
                if !self.feasible(counts)? {
                    break;
                }
                c += 1;
            }
            counts[i] = c;
            let mut maximal = true;
            for f in 0..i {
                counts[f] += 1;
                let grows = self.feasible(counts)?;
                counts[f] -= 1;
                if grows {
                    maximal = false;
                    break;
                }
            }
            if maximal {
                self.maximal.push(counts.clone());
            }
            counts[i] = 0;
            return Ok(());
        }
        for c in 0..=self.bound[i] {
            counts[i] = c;
            if c > 0 && !self.feasible(counts)? {
                break;
            }
            self.walk(i + 1, counts)?;
        }
        counts[i] = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Inside,
    Outside,
    Boundary,
}

/// Weight of one vertex in the Inside certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    /// Index into the gamma support.
    pub support: usize,
    pub vertex: Vec<u64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityVerdict {
    pub status: Status,
    /// Largest uniform slack `delta` with `lambda^E + delta <= sum_u Gamma(u) a(u)`
    /// on the positive coordinates; `None` when every rate is zero.
    pub margin: Option<f64>,
    /// Mixture over hull vertices reaching `lambda^E` (Inside and Boundary).
    pub mixture: Vec<Mixture>,
    /// Separating weights over step types (Outside): every point of the
    /// region has `y . x <= y . lambda^E - |margin| * sum y`.
    pub separator: Vec<f64>,
}

/// Allocation sets of every support point of `gamma`.
pub fn allocation_sets(gamma: &GammaTable, sys: &ValidatedSystem, cap: u64) -> Result<Vec<AllocationSet>> {
    gamma
        .support
        .iter()
        .map(|(u, _)| enumerate_allocations(&Availability::new(u.clone()), sys, cap))
        .collect()
}

/// Decides whether `lambda` (per task type) lies in the capacity region.
pub fn capacity_member(lambda: &[f64], gamma: &GammaTable, sys: &ValidatedSystem) -> Result<CapacityVerdict> {
    let sets = allocation_sets(gamma, sys, DEFAULT_CAP)?;
    member_with_sets(lambda, gamma, &sets, sys)
}

pub fn member_with_sets(
    lambda: &[f64],
    gamma: &GammaTable,
    sets: &[AllocationSet],
    sys: &ValidatedSystem,
) -> Result<CapacityVerdict> {
    if (gamma.total_probability() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "gamma probabilities sum to {}",
            gamma.total_probability()
        )));
    }
    let target = sys.expand(lambda);
    let active: Vec<usize> = (0..target.len()).filter(|&k| target[k] > 0.0).collect();
    let mut verts: Vec<(usize, &Vec<u64>, f64)> = Vec::new();
    for (i, (set, (_, p))) in sets.iter().zip(&gamma.support).enumerate() {
        for v in &set.maximal {
            verts.push((i, v, *p));
        }
    }
    if active.is_empty() {
        return Ok(CapacityVerdict {
            status: Status::Inside,
            margin: None,
            mixture: Vec::new(),
            separator: vec![0.0; target.len()],
        });
    }
    // variables: theta per vertex, delta+, delta-
    let nv = verts.len() + 2;
    let mut obj = vec![0.0; nv];
    obj[nv - 2] = 1.0;
    obj[nv - 1] = -1.0;
    let mut p = LpProblem::new(obj);
    for &k in &active {
        let mut row = vec![0.0; nv];
        for (x, &(_, v, pr)) in row.iter_mut().zip(&verts) {
            *x = -pr * v[k] as f64;
        }
        row[nv - 2] = 1.0;
        row[nv - 1] = -1.0;
        p.le(row, -target[k]);
    }
    for i in 0..sets.len() {
        let row = (0..nv)
            .map(|c| if c < verts.len() && verts[c].0 == i { 1.0 } else { 0.0 })
            .collect();
        p.le(row, 1.0);
    }
    let sol = solve_lp(&p);
    if sol.status != LpStatus::Optimal {
        return Err(Error::Invalid(format!("membership LP is {:?}", sol.status)));
    }
    let margin = sol.value;
    let status = if margin > BOUNDARY_TOL {
        Status::Inside
    } else if margin < -BOUNDARY_TOL {
        Status::Outside
    } else {
        Status::Boundary
    };
    let mut mixture = Vec::new();
    let mut separator = vec![0.0; target.len()];
    if status == Status::Outside {
        for (i, &k) in active.iter().enumerate() {
            separator[k] = sol.dual[i];
        }
    } else {
        for (c, &(i, v, _)) in verts.iter().enumerate() {
            if sol.x[c] > 1e-12 {
                mixture.push(Mixture {
                    support: i,
                    vertex: v.clone(),
                    weight: sol.x[c],
                });
            }
        }
    }
    Ok(CapacityVerdict {
        status,
        margin: Some(margin),
        mixture,
        separator,
    })
}

/// Point reached by an Inside certificate, per step type.
pub fn certificate_point(verdict: &CapacityVerdict, gamma: &GammaTable, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for m in &verdict.mixture {
        let p = gamma.support[m.support].1;
        for (k, &v) in m.vertex.iter().enumerate() {
            x[k] += p * m.weight * v as f64;
        }
    }
    x
}

/// Largest `c` with `c * ray` in the region, by bisection on the membership
/// margin to `tol`. The returned scale is always certified inside.
pub fn boundary_scalar(ray: &[f64], gamma: &GammaTable, sys: &ValidatedSystem, tol: f64) -> Result<f64> {
    if ray.iter().all(|&r| r <= 0.0) {
        return Err(Error::Invalid("ray must have a positive coordinate".into()));
    }
    let sets = allocation_sets(gamma, sys, DEFAULT_CAP)?;
    let inside = |c: f64| -> Result<bool> {
        let lambda: Vec<f64> = ray.iter().map(|r| r * c).collect();
        let v = member_with_sets(&lambda, gamma, &sets, sys)?;
        Ok(v.margin.is_none_or(|m| m >= 0.0))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while inside(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Invalid("region is unbounded along the ray".into()));
        }
    }
    while hi - lo > tol / 4.0 {
        let mid = 0.5 * (lo + hi);
        if inside(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Boundary along a ray solved directly: `max c` subject to
/// `c * ray^E <= sum_u Gamma(u) sum_v theta_{u,v} v`.
pub fn boundary_scalar_lp(ray: &[f64], gamma: &GammaTable, sys: &ValidatedSystem) -> Result<f64> {
    let sets = allocation_sets(gamma, sys, DEFAULT_CAP)?;
    let dir = sys.expand(ray);
    let mut verts = Vec::new();
    for (i, (set, (_, p))) in sets.iter().zip(&gamma.support).enumerate() {
        for v in &set.maximal {
            verts.push((i, v, *p));
        }
    }
    let nv = verts.len() + 1;
    let mut obj = vec![0.0; nv];
    obj[nv - 1] = 1.0;
    let mut lp = LpProblem::new(obj);
    for (k, &d) in dir.iter().enumerate() {
        let mut row: Vec<f64> = verts.iter().map(|&(_, v, p)| -p * v[k] as f64).collect();
        row.push(d);
        lp.le(row, 0.0);
    }
    for i in 0..sets.len() {
        let mut row: Vec<f64> = verts.iter().map(|&(j, _, _)| if j == i { 1.0 } else { 0.0 }).collect();
        row.push(0.0);
        lp.le(row, 1.0);
    }
    let sol = solve_lp(&lp);
    match sol.status {
        LpStatus::Optimal => Ok(sol.value),
        other => Err(Error::Invalid(format!("boundary LP is {other:?}"))),
    }
}

/// One necessary condition and how `lambda` fares against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub load: f64,
    pub capacity: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterBound {
    pub regime: Regime,
    pub pass: bool,
    pub checks: Vec<BoundCheck>,
}

fn within(load: f64, cap: f64) -> bool {
    load <= cap + 1e-9 * (1.0 + cap.abs())
}

/// Per-skill load `sum_{j,k} lambda_j r_{j,k,s}`.
pub fn skill_load(lambda: &[f64], sys: &ValidatedSystem) -> Vec<f64> {
    let mut load = vec![0.0; sys.num_skills()];
    for flat in 0..sys.num_step_types() {
        let j = sys.step_ref(flat).task;
        for &s in sys.step(flat).skills() {
            load[s] += lambda[j] * sys.step(flat).hours_of(s);
        }
    }
    load
}

/// Necessary conditions for `lambda` to be stabilizable, given mean
/// availability `mu` per agent type.
pub fn outer_bound_check(lambda: &[f64], mu: &[f64], sys: &ValidatedSystem) -> OuterBound {
    let regime = sys.regime();
    let load = skill_load(lambda, sys);
    let mut checks = Vec::new();
    if regime.flexible_agents() {
        checks.push(ff_bound(&load, mu, sys));
    } else {
        for (s, &l) in load.iter().enumerate() {
            let cap: f64 = sys
                .agent_types()
                .iter()
                .zip(mu)
                .map(|(a, &m)| m * a.skill_hours(s))
                .sum();
            checks.push(BoundCheck {
                name: format!("skill {s}"),
                load: l,
                capacity: cap,
                pass: within(l, cap),
            });
        }
    }
    if !regime.flexible_steps() {
        for flat in 0..sys.num_step_types() {
            let j = sys.step_ref(flat).task;
            if lambda[j] > 0.0 {
                let served = sys
                    .agent_types()
                    .iter()
                    .zip(mu)
                    .any(|(a, &m)| m > 0.0 && a.covers(sys.step(flat).skills()));
                checks.push(BoundCheck {
                    name: format!("coverage of step {:?}", sys.step_ref(flat)),
                    load: lambda[j],
                    capacity: if served { f64::MAX } else { 0.0 },
                    pass: served,
                });
            }
        }
        if regime.flexible_agents() {
            checks.extend(partition_bound(lambda, mu, sys));
        }
    }
    OuterBound {
        regime,
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

/// Existence of time fractions `b_{m,s}` (rows summing to at most 1) with
/// `load_s <= sum_m b_{m,s} h_m mu_m`.
fn ff_bound(load: &[f64], mu: &[f64], sys: &ValidatedSystem) -> BoundCheck {
    let mut vars = Vec::new();
    for (m, a) in sys.agent_types().iter().enumerate() {
        for s in a.skills.iter() {
            vars.push((m, s.0));
        }
    }
    let mut a_rows = Vec::new();
    let mut b = Vec::new();
    for m in 0..sys.num_agent_types() {
        a_rows.push(vars.iter().map(|&(mm, _)| if mm == m { 1.0 } else { 0.0 }).collect());
        b.push(1.0);
    }
    for (s, &l) in load.iter().enumerate() {
        a_rows.push(
            vars.iter()
                .map(|&(m, ss)| {
                    if ss == s {
                        -sys.agent_types()[m].flexible_hours() * mu[m]
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        // a hair of slack keeps exact-boundary points on the passing side
        b.push(-l + 1e-9 * (1.0 + l));
    }
    let total_load: f64 = load.iter().sum();
    let total_cap: f64 = sys
        .agent_types()
        .iter()
        .zip(mu)
        .map(|(a, &m)| m * a.flexible_hours())
        .sum();
    BoundCheck {
        name: "time split".into(),
        load: total_load,
        capacity: total_cap,
        pass: feasible(&a_rows, &b),
    }
}

/// Partition bound for inflexible steps when agent skill sets are pairwise
/// equal or disjoint and every loaded step has the same size.
fn partition_bound(lambda: &[f64], mu: &[f64], sys: &ValidatedSystem) -> Vec<BoundCheck> {
    let classes: BTreeSet<Vec<usize>> = sys
        .agent_types()
        .iter()
        .map(|a| a.skills.iter().map(|s| s.0).collect())
        .collect();
    let classes: Vec<Vec<usize>> = classes.into_iter().collect();
    let disjoint = classes.iter().enumerate().all(|(i, a)| {
        classes[i + 1..]
            .iter()
            .all(|b| a.iter().all(|s| !b.contains(s)))
    });
    let loaded: Vec<usize> = (0..sys.num_step_types())
        .filter(|&f| lambda[sys.step_ref(f).task] > 0.0)
        .collect();
    let Some(&first) = loaded.first() else {
        return Vec::new();
    };
    let size = sys.step(first).total();
    let same_size = loaded
        .iter()
        .all(|&f| (sys.step(f).total() - size).abs() <= 1e-12);
    if !disjoint || !same_size {
        return Vec::new();
    }
    classes
        .iter()
        .map(|class| {
            let load: f64 = loaded
                .iter()
                .filter(|&&f| sys.step(f).skills().iter().all(|s| class.contains(s)))
                .map(|&f| lambda[sys.step_ref(f).task])
                .sum();
            let cap: f64 = sys
                .agent_types()
                .iter()
                .zip(mu)
                .filter(|(a, _)| a.skills.iter().map(|s| s.0).eq(class.iter().copied()))
                .map(|(a, &m)| m * (a.flexible_hours() / size + 1e-9).floor())
                .sum();
            BoundCheck {
                name: format!("partition {class:?}"),
                load,
                capacity: cap,
                pass: within(load, cap),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1;
    use crate::model::*;
    use std::collections::BTreeMap;

    #[test]
    fn t1_allocation_set() {
        let sys = t1();
        let set = enumerate_allocations(&Availability::new(vec![1, 1]), &sys, DEFAULT_CAP).unwrap();
        assert_eq!(set.maximal, vec![vec![2, 2]]);
        assert!(set.contains(&[1, 2]));
        assert!(!set.contains(&[3, 0]));
        let zero = enumerate_allocations(&Availability::new(vec![0, 0]), &sys, DEFAULT_CAP).unwrap();
        assert_eq!(zero.maximal, vec![vec![0, 0]]);
    }

    #[test]
    fn fi_single_agent_set() {
        let cfg = SystemConfig {
            skills: 1,
            regime: Regime::FI,
            agent_types: vec![AgentTypeConfig {
                skills: vec![0],
                hours: Some(1.0),
                skill_hours: None,
                availability: None,
            }],
            task_types: vec![TaskTypeConfig {
                steps: vec![BTreeMap::from([(0, 0.4)])],
                parent: None,
                rate: None,
                arrivals: None,
            }],
        };
        let sys = validate_config(&cfg).unwrap();
        let set = enumerate_allocations(&Availability::new(vec![1]), &sys, DEFAULT_CAP).unwrap();
        assert_eq!(set.maximal, vec![vec![2]]);
    }

    #[test]
    fn cap_is_enforced() {
        let sys = t1();
        let e = enumerate_allocations(&Availability::new(vec![40, 40]), &sys, 100).unwrap_err();
        assert!(matches!(e, Error::Intractable(_)));
    }

    #[test]
    fn t1_membership() {
        let sys = t1();
        let g = GammaTable::deterministic(vec![1, 1]);
        let v = capacity_member(&[1.9], &g, &sys).unwrap();
        assert_eq!(v.status, Status::Inside);
        let x = certificate_point(&v, &g, 2);
        assert!(x.iter().all(|&xi| xi >= 1.9 - CERTIFICATE_TOL));
        let v = capacity_member(&[2.1], &g, &sys).unwrap();
        assert_eq!(v.status, Status::Outside);
        assert!(v.separator.iter().any(|&y| y > 0.0));
        assert_eq!(capacity_member(&[0.0], &g, &sys).unwrap().status, Status::Inside);
        assert_eq!(capacity_member(&[2.0], &g, &sys).unwrap().status, Status::Boundary);
    }

    #[test]
    fn t1_ray_boundary() {
        let sys = t1();
        let g = GammaTable::deterministic(vec![1, 1]);
        let c = boundary_scalar(&[1.0], &g, &sys, 1e-6).unwrap();
        assert!((c - 2.0).abs() <= 1e-6, "{c}");
        assert!((boundary_scalar_lp(&[1.0], &g, &sys).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn t1_outer_bound() {
        let sys = t1();
        let mu = [1.0, 1.0];
        let ob = outer_bound_check(&[1.9], &mu, &sys);
        assert!(ob.pass);
        assert!((ob.checks[0].load - 0.95).abs() < 1e-12);
        assert!(!outer_bound_check(&[2.1], &mu, &sys).pass);
        assert!(outer_bound_check(&[0.0], &mu, &sys).pass);
    }
}
