use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sage_core::datagen::gen_gnp;
use sage_core::sampler::{build_minibatch_plan, expected_tree_slots, MinibatchPlan};

fn random_plan(seed: u64) -> (sage_core::graph::Graph, Vec<usize>, MinibatchPlan) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(1..40);
    let g = gen_gnp(n, r.random_range(0.0..0.3), 2, &mut r).unwrap();
    let depth = r.random_range(1..4);
    let sizes: Vec<usize> = (0..depth).map(|_| r.random_range(1..6)).collect();
    let batch: Vec<usize> = (0..r.random_range(1..8)).map(|_| r.random_range(0..n)).collect();
    let plan = build_minibatch_plan(&g, &batch, &sizes, &mut r).unwrap();
    (g, batch, plan)
}

#[test]
fn every_reference_resolves_inside_the_previous_frontier() {
    for seed in 0..1000 {
        let (g, batch, plan) = random_plan(seed);
        let k_max = plan.depth();
        let mut uniq = batch.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let mut top = plan.batch().to_vec();
        top.sort_unstable();
        assert_eq!(top, uniq, "seed {seed}");
        for k in 1..=k_max {
            let layer = &plan.layers[k - 1];
            let prev = &plan.frontiers[k - 1];
            let cur = &plan.frontiers[k];
            // frontier prefix property
            assert_eq!(&prev[..cur.len()], &cur[..], "seed {seed} depth {k}");
            assert_eq!(layer.targets(), cur.len());
            for (i, &u) in cur.iter().enumerate() {
                let draws = layer.of(i);
                assert_eq!(draws.len(), plan.sizes[k - 1]);
                for (j, &w) in draws.iter().enumerate() {
                    let p = layer.positions[layer.offsets[i] + j];
                    assert_eq!(prev[p], w);
                    if g.degree(u) == 0 {
                        assert_eq!(w, u);
                    } else {
                        assert!(g.has_edge(u, w), "seed {seed}: {w} is not a neighbour of {u}");
                    }
                }
            }
        }
    }
}

#[test]
fn slot_counts_and_frontier_bound_hold() {
    for seed in 0..1000 {
        let (_, _, plan) = random_plan(seed);
        let expect = expected_tree_slots(&plan.sizes);
        assert!(plan.tree_slots_per_item().iter().all(|&s| s == expect));
        let bound: usize = plan.batch().len() * plan.sizes.iter().map(|s| 1 + s).product::<usize>();
        assert!(plan.frontiers[0].len() <= bound);
        assert!(expect <= plan.depth() * plan.sizes.iter().product::<usize>());
    }
}

#[test]
fn replay_with_the_same_seed_is_identical() {
    for seed in 0..100 {
        assert_eq!(random_plan(seed).2, random_plan(seed).2);
    }
}
