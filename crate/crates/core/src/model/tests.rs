use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sampler::build_minibatch_plan;

fn graph(feats: &[f64], dim: usize, edges: &[(usize, usize)]) -> Graph {
    let n = feats.len() / dim;
    Graph::from_indices(n, edges, Tensor::from_f64(n, dim, feats).unwrap()).unwrap()
}

fn identity_mean(dim: usize) -> Model<f64> {
    let cfg = ModelConfig {
        depth: 1,
        sample_sizes: vec![5],
        dims: vec![2 * dim],
        ..ModelConfig::new(dim)
    };
    let params = ModelParams {
        layers: vec![vec![NamedTensor::new("weight", Tensor::identity(2 * dim))]],
        head: Vec::new(),
    };
    Model::new(cfg, params).unwrap()
}

#[test]
fn zero_depth_returns_features() {
    let g = graph(&[1.0, 2.0, -3.0, 4.0], 2, &[(0, 1)]);
    let cfg = ModelConfig::new(2).with_depth(0, 8);
    let m = Model::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.forward_full(&g).unwrap(), g.features().cast());
}

#[test]
fn isolated_node_hand_computation() {
    let g = graph(&[3.0, 4.0], 2, &[]);
    let z = identity_mean(2).forward_full(&g).unwrap();
    assert_eq!(z.data(), &[0.6, 0.8, 0.0, 0.0]);
}

#[test]
fn single_edge_hand_computation() {
    let g = graph(&[1.0, 0.0, 0.0, 1.0], 2, &[(0, 1)]);
    let z = identity_mean(2).forward_full(&g).unwrap();
    let s = 1.0 / 2f64.sqrt();
    let want = [s, 0.0, 0.0, s];
    for (a, b) in z.row(0).iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn random_graph(n: usize, p: f64, dim: usize, seed: u64) -> Graph {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let feats: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Graph::from_indices(n, &edges, Tensor::from_vec(n, dim, feats).unwrap()).unwrap()
}

#[test]
fn outputs_are_unit_norm_for_every_aggregator() {
    let g = random_graph(25, 0.15, 6, 1);
    for agg in ["mean", "gcn", "pool", "lstm"] {
        let cfg = ModelConfig {
            aggregator: agg.into(),
            agg_dims: AggregatorDims {
                pool_dim: 8,
                lstm_dim: 5,
            },
            ..ModelConfig::new(6).with_depth(2, 7)
        };
        let m = Model::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let z = m.forward_full(&g).unwrap();
        for (v, norm) in z.row_norms().into_iter().enumerate() {
            // relu may zero a whole row; those stay zero
            assert!((norm - 1.0).abs() < 1e-6 || norm == 0.0, "{agg} node {v}: {norm}");
        }
        let plan = build_minibatch_plan(&g, &[0, 3, 5], &m.config.sample_sizes, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let zb = m.forward_minibatch(&g, &plan).unwrap();
        assert_eq!(zb.rows(), 3);
        assert!(zb.is_finite());
    }
}

#[test]
fn isolated_node_in_plan_uses_fallback() {
    let g = graph(&[0.3, -0.2, 1.0, 1.0, 0.5, 0.5], 2, &[(1, 2)]);
    let cfg = ModelConfig {
        activation: Activation::Identity,
        output_activation: Activation::Identity,
        ..ModelConfig::new(2).with_depth(2, 3)
    };
    let m = Model::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let plan = build_minibatch_plan(&g, &[0], &[4, 4], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let z = m.forward_minibatch(&g, &plan).unwrap();
    assert!(z.is_finite());
    assert!((z.row_norms()[0] - 1.0).abs() < 1e-6);
    let full = m.forward_full(&g).unwrap();
    assert!(full.select_rows(&[0]).max_abs_diff(&z) < 1e-6);
}

#[test]
fn adjacency_order_does_not_matter() {
    let g = random_graph(30, 0.2, 5, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for agg in ["mean", "gcn", "pool"] {
        let cfg = ModelConfig {
            aggregator: agg.into(),
            agg_dims: AggregatorDims {
                pool_dim: 6,
                lstm_dim: 4,
            },
            ..ModelConfig::new(5).with_depth(2, 4)
        };
        let m = Model::<f32>::init(cfg, &mut rng).unwrap();
        let base = m.forward_full(&g).unwrap();
        for _ in 0..5 {
            let shuffled = g.shuffled_adjacency(&mut rng);
            assert_eq!(m.forward_full(&shuffled).unwrap(), base, "{agg}");
        }
    }
}

#[test]
fn model_file_roundtrip() {
    let cfg = ModelConfig {
        aggregator: "pool".into(),
        agg_dims: AggregatorDims {
            pool_dim: 3,
            lstm_dim: 2,
        },
        head: Some(HeadConfig {
            kind: LabelKind::Single,
            classes: 4,
        }),
        ..ModelConfig::new(5).with_depth(2, 6)
    };
    let m = Model::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let mut buf = Vec::new();
    save_model(&mut buf, &m).unwrap();
    assert_eq!(&buf[..6], MODEL_MAGIC);
    let back = load_model(&buf[..]).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.params, m.params);
    buf.push(0);
    assert!(load_model(&buf[..]).is_err());
    assert!(load_model(&buf[..20]).is_err());
}

#[test]
fn mismatched_parameters_are_rejected() {
    let cfg = ModelConfig::new(3).with_depth(1, 4);
    let params = ModelParams {
        layers: vec![vec![NamedTensor::new("weight", Tensor::<f32>::zeros(3, 4))]],
        head: Vec::new(),
    };
    assert!(Model::new(cfg, params).is_err());
}

#[test]
fn feature_width_is_checked() {
    let g = graph(&[1.0, 2.0, 3.0], 3, &[]);
    assert!(matches!(
        identity_mean(2).forward_full(&g),
        Err(SageError::ShapeMismatch { .. })
    ));
}

#[test]
fn plan_depth_is_checked() {
    let g = graph(&[1.0, 2.0, 3.0, 4.0], 2, &[(0, 1)]);
    let plan = build_minibatch_plan(&g, &[0], &[2, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(identity_mean(2).forward_minibatch(&g, &plan).is_err());
}
