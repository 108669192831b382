use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sage_core::datagen::gen_gnp;
use sage_core::graph::{
    clustering_coefficient, degree_labels, read_edges, read_features, read_ids, same_partition, wl_refine,
    write_edges, write_features, write_ids, Graph,
};

fn graph(n: usize, p: f64, seed: u64) -> Graph {
    gen_gnp(n, p, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn brute_clustering(g: &Graph, v: usize) -> f64 {
    let nb = g.neighbors(v);
    let d = nb.len();
    if d < 2 {
        return 0.0;
    }
    let mut closed = 0;
    for i in 0..d {
        for j in 0..d {
            if i != j && g.has_edge(nb[i], nb[j]) {
                closed += 1;
            }
        }
    }
    closed as f64 / (d * (d - 1)) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clustering_matches_brute_force(n in 1usize..=12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, seed);
        for v in 0..n {
            let c = clustering_coefficient(&g, v);
            prop_assert!((c.value - brute_clustering(&g, v)).abs() < 1e-12);
            prop_assert_eq!(c.defined, g.degree(v) >= 2);
        }
    }

    #[test]
    fn refinement_is_stable_after_n_rounds(n in 1usize..=12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, seed);
        let init = degree_labels(&g);
        let a = wl_refine(&g, &init, n);
        let b = wl_refine(&g, &init, n + 1);
        prop_assert!(same_partition(&a.labels, &b.labels));
    }

    #[test]
    fn capping_is_idempotent_and_never_raises_degree(
        n in 1usize..=30, p in 0.0f64..1.0, cap in 1usize..6, seed in any::<u64>()
    ) {
        let g = graph(n, p, seed);
        let once = g.cap_degrees(cap, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let twice = once.cap_degrees(cap, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for v in 0..n {
            prop_assert!(once.degree(v) <= g.degree(v).min(cap));
            prop_assert_eq!(once.neighbors(v), twice.neighbors(v));
        }
        let again = g.cap_degrees(cap, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for v in 0..n {
            prop_assert_eq!(once.neighbors(v), again.neighbors(v));
        }
    }

    #[test]
    fn serialise_then_parse_is_identity(n in 1usize..=25, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, seed);
        let (mut ids, mut edges, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        write_ids(&mut ids, g.ids()).unwrap();
        write_edges(&mut edges, &g).unwrap();
        write_features(&mut feats, g.features()).unwrap();
        let back = Graph::build(
            read_ids(&ids[..]).unwrap(),
            &read_edges(&edges[..]).unwrap(),
            read_features(&feats[..]).unwrap(),
        )
        .unwrap();
        prop_assert_eq!(back.ids(), g.ids());
        for v in 0..n {
            prop_assert_eq!(back.neighbors(v), g.neighbors(v));
        }
        let bits = |t: &[f32]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.features().data()), bits(g.features().data()));
    }
}
