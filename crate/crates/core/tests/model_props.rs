use crowdalloc::fixtures::{random_config, Shape};
use crowdalloc::model::{depth_classes, tree_leaves, validate_config, PrecedenceTree, Regime};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REGIMES: [Regime; 4] = [Regime::IF, Regime::FF, Regime::FI, Regime::II];

/// Random recursive tree on `n` nodes with shuffled labels.
fn arb_tree() -> impl Strategy<Value = Vec<Option<usize>>> {
    (1usize..12)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<prop::sample::Index>(), n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(picks, label)| {
            let n = label.len();
            let mut parent = vec![None; n];
            for k in 1..n {
                parent[label[k]] = Some(label[picks[k].index(k)]);
            }
            parent
        })
}

fn count_leaves(parent: &[Option<usize>], node: usize) -> u64 {
    let kids: Vec<usize> = (0..parent.len()).filter(|&c| parent[c] == Some(node)).collect();
    if kids.is_empty() {
        1
    } else {
        kids.iter().map(|&c| count_leaves(parent, c)).sum()
    }
}

fn walk_depth(parent: &[Option<usize>], mut node: usize) -> usize {
    let mut d = 1;
    while let Some(p) = parent[node] {
        node = p;
        d += 1;
    }
    d
}

proptest! {
    #[test]
    fn leaf_counts_match_traversal(parent in arb_tree()) {
        let tree = PrecedenceTree::new(parent.clone()).unwrap();
        for k in 0..parent.len() {
            prop_assert_eq!(tree_leaves(&tree, k), count_leaves(&parent, k));
            prop_assert_eq!(tree.depth(k), walk_depth(&parent, k));
        }
        let leaves = (0..parent.len()).filter(|&k| tree.is_leaf(k)).count() as u64;
        prop_assert_eq!(tree.leaves(tree.root()), leaves);
    }

    #[test]
    fn depth_classes_partition_steps(seed in any::<u64>(), r in 0usize..4) {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape { max_task_types: 3, max_steps: 5, ..Shape::default() };
        let sys = validate_config(&random_config(rng, REGIMES[r], shape)).unwrap();
        let classes = depth_classes(&sys);
        let total: usize = classes.iter().map(Vec::len).sum();
        let steps: usize = sys.task_types().iter().map(|t| t.tree.len()).sum();
        prop_assert_eq!(total, steps);
        let mut seen: Vec<usize> = classes.iter().flatten().map(|r| sys.flat(r.task, r.step)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..steps).collect::<Vec<_>>());
        for (d, class) in classes.iter().enumerate() {
            for r in class {
                prop_assert_eq!(sys.task_types()[r.task].tree.depth(r.step), d + 1);
            }
        }
    }

    #[test]
    fn validation_is_idempotent(seed in any::<u64>(), r in 0usize..4) {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(rng, REGIMES[r], Shape::default());
        let once = validate_config(&cfg).unwrap();
        let twice = validate_config(&once.to_config()).unwrap();
        prop_assert_eq!(once, twice);
    }
}
