use std::collections::{BTreeMap, BTreeSet};

use crowdalloc::capacity::{enumerate_allocations, DEFAULT_CAP};
use crowdalloc::constraints::{check_allocation, Allocation, AgentId, Availability};
use crowdalloc::fixtures::{random_config, Shape};
use crowdalloc::model::{validate_config, Regime, ValidatedSystem};
use crowdalloc::policies_central::{
    centralized_exact, centralized_fi, centralized_lp_ff, centralized_lp_if, clamped_weights, knapsack_agent,
    KnapsackInstance,
};
use crowdalloc::policies_greedy::{algo_variants, prioritized_greedy, AlgoVariant, FlexGreedyState, GammaSchedule};
use crowdalloc::policy::{EpochContext, Policy, PolicyKind, PolicyParams};
use crowdalloc::processes::{sample_arrivals, ProcessSpec, Rng};
use crowdalloc::sim::QueueState;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REGIMES: [Regime; 4] = [Regime::IF, Regime::FF, Regime::FI, Regime::II];

struct Instance {
    sys: ValidatedSystem,
    q: Vec<u64>,
    avail: Availability,
}

fn instance(seed: u64, regime: Regime, shape: Shape, max_q: u64, max_u: u64) -> Instance {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let sys = validate_config(&random_config(rng, regime, shape)).unwrap();
    let q = (0..sys.num_step_types()).map(|_| rng.random_range(0..=max_q)).collect();
    let avail = Availability::new((0..sys.num_agent_types()).map(|_| rng.random_range(0..=max_u)).collect());
    Instance { sys, q, avail }
}

/// Best weighted count vector within the allocation set and the queue.
/// `None` when the lattice is over the enumeration cap.
fn enumerated_optimum(x: &Instance, w: &[f64]) -> Option<f64> {
    let set = enumerate_allocations(&x.avail, &x.sys, DEFAULT_CAP).ok()?;
    let best = set
        .maximal
        .iter()
        .map(|v| v.iter().zip(&x.q).zip(w).map(|((&a, &q), w)| a.min(q) as f64 * w).sum::<f64>())
        .fold(0.0, f64::max);
    Some(best)
}

/// Drops step instance `(flat, ordinal)` and renumbers the last instance of
/// that type into the gap.
fn remove_instance(alloc: &Allocation, x: &Instance, flat: usize, ordinal: u64) -> Allocation {
    let last = alloc.counts[flat] - 1;
    let mut out = alloc.clone();
    out.counts[flat] -= 1;
    out.assignments = alloc
        .assignments
        .iter()
        .filter(|a| !(x.sys.flat(a.step.task, a.step.step) == flat && a.step.ordinal == ordinal))
        .map(|a| {
            let mut a = *a;
            if x.sys.flat(a.step.task, a.step.step) == flat && a.step.ordinal == last {
                a.step.ordinal = ordinal;
            }
            a
        })
        .collect();
    out
}

fn knapsack_brute(inst: &KnapsackInstance, i: usize, room: u64) -> f64 {
    if i == inst.values.len() {
        return 0.0;
    }
    let mut best = 0.0f64;
    let mut z = 0;
    while z <= inst.bounds[i] && z * inst.sizes[i] <= room {
        best = best.max(z as f64 * inst.values[i] + knapsack_brute(inst, i + 1, room - z * inst.sizes[i]));
        z += 1;
    }
    best
}

/// Unbounded knapsack of one flexible agent over the step types it covers,
/// by exhaustive search on real hours.
fn agent_optimum(sys: &ValidatedSystem, m: usize, w: &[f64], flats: &[usize], room: f64) -> f64 {
    let Some((&f, rest)) = flats.split_first() else {
        return 0.0;
    };
    let mut best = agent_optimum(sys, m, w, rest, room);
    if w[f] > 0.0 && sys.agent_types()[m].covers(sys.step(f).skills()) {
        let size = sys.step(f).total();
        let mut z = 1.0;
        while z * size <= room + 1e-9 {
            best = best.max(z * w[f] + agent_optimum(sys, m, w, rest, room - z * size));
            z += 1.0;
        }
    }
    best
}

fn depth_of(sys: &ValidatedSystem, flat: usize) -> usize {
    let r = sys.step_ref(flat);
    sys.task_types()[r.task].tree.depth(r.step)
}

/// Pooled per-skill hours left after the assignments accepted by `keep`.
fn pooled_leftover(x: &Instance, alloc: &Allocation, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut left = vec![0.0; x.sys.num_skills()];
    for (m, &u) in x.avail.counts.iter().enumerate() {
        for (s, l) in left.iter_mut().enumerate() {
            *l += u as f64 * x.sys.agent_types()[m].skill_hours(s);
        }
    }
    for a in &alloc.assignments {
        if keep(x.sys.flat(a.step.task, a.step.step)) {
            left[a.skill] -= a.hours;
        }
    }
    left
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn removing_a_step_keeps_allocation_valid(seed in any::<u64>(), r in 0usize..4, pick in any::<prop::sample::Index>()) {
        let x = instance(seed, REGIMES[r], Shape::default(), 4, 3);
        let alloc = centralized_exact(&x.q, &x.avail, &x.sys).unwrap();
        check_allocation(x.sys.regime(), &alloc, &x.avail, &x.sys).unwrap();
        let instances: BTreeSet<(usize, u64)> = alloc
            .assignments
            .iter()
            .map(|a| (x.sys.flat(a.step.task, a.step.step), a.step.ordinal))
            .collect();
        prop_assume!(!instances.is_empty());
        let &(flat, ordinal) = pick.get(&instances.into_iter().collect::<Vec<_>>());
        let smaller = remove_instance(&alloc, &x, flat, ordinal);
        prop_assert!(check_allocation(x.sys.regime(), &smaller, &x.avail, &x.sys).is_ok());
        prop_assert_eq!(smaller.total_steps() + 1, alloc.total_steps());
    }

    #[test]
    fn exact_matches_enumeration_and_lp_is_within_sum_of_weights(seed in any::<u64>(), ff in any::<bool>()) {
        let regime = if ff { Regime::FF } else { Regime::IF };
        let shape = Shape { grain: 0.1, ..Shape::default() };
        let x = instance(seed, regime, shape, 5, 2);
        let w = clamped_weights(&x.q, &x.sys);
        let want = enumerated_optimum(&x, &w);
        prop_assume!(want.is_some());
        let want = want.unwrap();
        let exact = centralized_exact(&x.q, &x.avail, &x.sys).unwrap().objective(&w);
        prop_assert!((exact - want).abs() <= 1e-9, "exact {} vs {}", exact, want);
        let lp = if ff { centralized_lp_ff(&x.q, &x.avail, &x.sys) } else { centralized_lp_if(&x.q, &x.avail, &x.sys) };
        let lp = lp.unwrap();
        check_allocation(regime, &lp, &x.avail, &x.sys).unwrap();
        let v = lp.objective(&w);
        let sum_w: f64 = w.iter().sum();
        prop_assert!(v <= want + 1e-9 && v >= want - sum_w - 1e-9, "lp {} outside [{}, {}]", v, want - sum_w, want);
    }

    #[test]
    fn knapsack_matches_exhaustive_search(
        items in proptest::collection::vec((0u32..20, 1u64..15, 0u64..5), 1..=12),
        capacity in 0u64..=40,
    ) {
        let inst = KnapsackInstance {
            values: items.iter().map(|i| i.0 as f64).collect(),
            sizes: items.iter().map(|i| i.1).collect(),
            bounds: items.iter().map(|i| i.2).collect(),
            capacity,
        };
        let sol = knapsack_agent(&inst);
        let used: u64 = sol.counts.iter().zip(&inst.sizes).map(|(z, s)| z * s).sum();
        prop_assert!(used <= capacity);
        prop_assert!(sol.counts.iter().zip(&inst.bounds).all(|(z, b)| z <= b));
        let v: f64 = sol.counts.iter().zip(&inst.values).map(|(&z, v)| z as f64 * v).sum();
        prop_assert!((v - sol.value).abs() <= 1e-9);
        prop_assert!((sol.value - knapsack_brute(&inst, 0, capacity)).abs() <= 1e-9);
    }

    #[test]
    fn fi_decomposition_reaches_per_agent_optimum(seed in any::<u64>()) {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape { max_agent_types: 2, max_task_types: 2, max_steps: 2, grain: 0.1, ..Shape::default() };
        let sys = validate_config(&random_config(rng, Regime::FI, shape)).unwrap();
        prop_assume!(sys.num_step_types() <= 4);
        let mut counts = vec![0u64; sys.num_agent_types()];
        for _ in 0..rng.random_range(1..=2) {
            counts[rng.random_range(0..sys.num_agent_types())] += 1;
        }
        let x = Instance { q: vec![20; sys.num_step_types()], avail: Availability::new(counts), sys };
        let w = clamped_weights(&x.q, &x.sys);
        let alloc = centralized_fi(&x.q, &x.avail, &x.sys).unwrap();
        check_allocation(Regime::FI, &alloc, &x.avail, &x.sys).unwrap();
        let flats: Vec<usize> = (0..x.sys.num_step_types()).collect();
        let want: f64 = x
            .avail
            .agents()
            .map(|a| agent_optimum(&x.sys, a.agent_type, &w, &flats, x.sys.agent_types()[a.agent_type].flexible_hours()))
            .sum();
        prop_assert!((alloc.objective(&w) - want).abs() <= 1e-9, "{} vs {}", alloc.objective(&w), want);
    }

    #[test]
    fn algo1_departs_from_algo2_only_by_splitting(seed in any::<u64>(), t in 1u64..100) {
        let x = instance(seed, Regime::FF, Shape::default(), 5, 3);
        let queue = QueueState::from_counts(&x.sys, &x.q);
        let rng = Rng::new(seed);
        let a1 = algo_variants(AlgoVariant::Algo1, &queue, &x.avail, &x.sys, &rng, t);
        let a2 = algo_variants(AlgoVariant::Algo2, &queue, &x.avail, &x.sys, &rng, t);
        check_allocation(Regime::FF, &a1, &x.avail, &x.sys).unwrap();
        check_allocation(Regime::FF, &a2, &x.avail, &x.sys).unwrap();
        // substep-atomic: one agent per (instance, skill)
        let mut per_skill: BTreeMap<(usize, u64, usize), BTreeSet<AgentId>> = BTreeMap::new();
        for a in &a2.assignments {
            per_skill.entry((x.sys.flat(a.step.task, a.step.step), a.step.ordinal, a.skill)).or_default().insert(a.agent);
        }
        prop_assert!(per_skill.values().all(|s| s.len() == 1));
        let common = a1.assignments.iter().zip(&a2.assignments).take_while(|(a, b)| a == b).count();
        if common == a1.assignments.len() && common == a2.assignments.len() {
            prop_assert_eq!(&a1.counts, &a2.counts);
        } else {
            prop_assert!(common < a1.assignments.len(), "algo1 stopped early");
            let first = a1.assignments[common].step;
            let mut agents: BTreeMap<usize, BTreeSet<AgentId>> = BTreeMap::new();
            for a in a1.assignments.iter().filter(|a| a.step == first) {
                agents.entry(a.skill).or_default().insert(a.agent);
            }
            prop_assert!(agents.values().any(|s| s.len() > 1), "first divergence at {:?} is not a split", first);
        }
    }

    #[test]
    fn prioritized_greedy_respects_depth(seed in any::<u64>(), t in 1u64..100) {
        let shape = Shape { max_steps: 4, ..Shape::default() };
        let x = instance(seed, Regime::IF, shape, 4, 2);
        let queue = QueueState::from_counts(&x.sys, &x.q);
        let alloc = prioritized_greedy(&queue, &x.avail, &x.sys, &Rng::new(seed), t);
        check_allocation(Regime::IF, &alloc, &x.avail, &x.sys).unwrap();
        for flat in 0..x.sys.num_step_types() {
            prop_assert!(alloc.counts[flat] <= x.q[flat]);
            if alloc.counts[flat] == x.q[flat] {
                continue;
            }
            let d = depth_of(&x.sys, flat);
            let left = pooled_leftover(&x, &alloc, |f| depth_of(&x.sys, f) <= d);
            let step = x.sys.step(flat);
            prop_assert!(
                step.skills().iter().any(|&s| left[s] < step.hours_of(s) + 1e-7),
                "step {} at depth {} left queued with leftover {:?}", flat, d, left
            );
        }
    }

    #[test]
    fn policies_are_deterministic(seed in any::<u64>(), r in 0usize..4, t in 1u64..50) {
        let x = instance(seed, REGIMES[r], Shape::default(), 4, 3);
        let queue = QueueState::from_counts(&x.sys, &x.q);
        let rng = Rng::new(seed ^ 0x5eed);
        let arrivals = vec![1; x.sys.num_task_types()];
        for kind in PolicyKind::ALL.iter().copied().filter(|k| k.supports(x.sys.regime())) {
            let ctx = EpochContext { t, queue: &queue, avail: &x.avail, arrivals: &arrivals, rng: &rng };
            let a = Policy::new(kind, &x.sys, PolicyParams::default()).unwrap().allocate(&ctx, &x.sys).unwrap();
            let b = Policy::new(kind, &x.sys, PolicyParams::default()).unwrap().allocate(&ctx, &x.sys).unwrap();
            prop_assert_eq!(&a, &b, "{}", kind);
            check_allocation(x.sys.regime(), &a, &x.avail, &x.sys).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn arrival_estimates_converge(rates in proptest::collection::vec(0.2f64..3.0, 1..=3), seed in any::<u64>()) {
        let cfg = {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape { max_task_types: 1, ..Shape::default() };
            random_config(rng, Regime::FF, shape)
        };
        let mut cfg = cfg;
        let proto = cfg.task_types[0].clone();
        cfg.task_types = rates.iter().map(|_| proto.clone()).collect();
        let sys = validate_config(&cfg).unwrap();
        let specs: Vec<ProcessSpec> = rates.iter().map(|&mean| ProcessSpec::Poisson { mean }).collect();
        let mut state = FlexGreedyState::new(&sys, 0.05, GammaSchedule::Harmonic);
        let avail = Availability::new(vec![1; sys.num_agent_types()]);
        let rng = Rng::new(seed);
        let horizon = 10_000u64;
        for t in 1..=horizon {
            state.update(&sample_arrivals(&specs, &rng, t), &avail);
        }
        for (a, &l) in state.abar.iter().zip(&rates) {
            let se = (l / horizon as f64).sqrt();
            prop_assert!((a - l).abs() < 5.0 * se, "estimate {} for rate {} (se {})", a, l, se);
        }
    }
}
