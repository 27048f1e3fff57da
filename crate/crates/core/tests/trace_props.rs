use crowdalloc::model::{validate_config, Regime};
use crowdalloc::traceio::{
    compile_trace, compiled_skill_seconds, gen_synthetic, read_trace, workload_skill_seconds, write_trace,
    CompileOptions, SyntheticKind, WorkerPoolSpec,
};
use proptest::prelude::*;

fn arb_kind() -> impl Strategy<Value = SyntheticKind> {
    prop::sample::select(vec![SyntheticKind::Short, SyntheticKind::Long, SyntheticKind::Samahub])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_files_round_trip(kind in arb_kind(), load in 1.0f64..30.0, seed in any::<u64>()) {
        let w = gen_synthetic(kind, load, 1, seed).unwrap();
        let mut first = Vec::new();
        write_trace(&w, &mut first).unwrap();
        let back = read_trace(first.as_slice()).unwrap();
        prop_assert_eq!(&back, &w);
        let mut second = Vec::new();
        write_trace(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn short_workloads_stay_in_range(load in 1.0f64..60.0, seed in any::<u64>()) {
        let w = gen_synthetic(SyntheticKind::Short, load, 1, seed).unwrap();
        for t in &w.tasks {
            prop_assert!((1..=3).contains(&t.steps.len()));
            for s in &t.steps {
                prop_assert!((1..=3).contains(&s.substeps.len()));
                for x in &s.substeps {
                    prop_assert!(x.skill <= 4);
                    prop_assert!((60.0..=600.0).contains(&x.duration_sec));
                }
            }
        }
    }

    #[test]
    fn compilation_preserves_skill_seconds(
        kind in arb_kind(),
        load in 1.0f64..40.0,
        seed in any::<u64>(),
        grid in prop::option::of(prop::sample::select(vec![60.0, 300.0])),
        regime in prop::sample::select(Regime::ALL.to_vec()),
        random_skills in any::<bool>(),
    ) {
        let w = gen_synthetic(kind, load, 1, seed).unwrap();
        let skills: Vec<usize> = (0..5).collect();
        let mut pool = WorkerPoolSpec::four_zones(12, skills);
        if random_skills {
            pool = pool.with_random_skills(3, seed);
        }
        let c = compile_trace(&w, &pool, &CompileOptions { epoch_seconds: 7200.0, grid_sec: grid, regime, horizon: 24 }).unwrap();
        validate_config(&c.config).unwrap();
        prop_assert_eq!(c.type_of.len(), w.len());
        prop_assert_eq!(c.members.iter().sum::<u64>(), w.len() as u64);
        let a = workload_skill_seconds(&w);
        let b = compiled_skill_seconds(&c, 7200.0);
        prop_assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (s, x) in &a {
            prop_assert!((x - b[s]).abs() <= 1e-9 * x.max(1.0), "skill {}: {} vs {}", s, x, b[s]);
        }
    }
}
