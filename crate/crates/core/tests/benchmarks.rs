//! Statistical properties of the synthetic benchmarks over five seeds.

use sage_core::datagen::{gen_sbm_inductive, SyntheticSpec, CALIBRATED_NOISE};
use sage_core::eval::LogisticConfig;
use sage_core::experiments::{supervised_f1, supervised_preset, unsupervised_f1, unsupervised_preset};
use sage_core::train::TrainOutput;

const SEEDS: u64 = 5;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn first_and_last_tenth(out: &TrainOutput) -> (f64, f64) {
    let losses: Vec<f64> = out.log.iter().map(|s| s.loss).collect();
    let k = (losses.len() / 10).max(1);
    (mean(&losses[..k]), mean(&losses[losses.len() - k..]))
}

#[test]
fn second_hop_helps_and_supervised_loss_falls() {
    let (mut one, mut two) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let d = gen_sbm_inductive(&SyntheticSpec::inductive(CALIBRATED_NOISE, seed)).unwrap();
        for (depth, scores) in [(1, &mut one), (2, &mut two)] {
            let (mcfg, cfg) = supervised_preset(d.graph.feature_dim(), "mean", seed);
            let mcfg = mcfg.with_depth(depth, 256);
            let (f1, out) = supervised_f1(&d, &mcfg, &cfg).unwrap();
            let first = out.history.first().unwrap().train_loss;
            let last = out.history.last().unwrap().train_loss;
            assert!(last < first, "depth {depth} seed {seed}: {first} -> {last}");
            scores.push(f1);
        }
    }
    assert!(mean(&two) >= mean(&one), "depth 1 {one:?}, depth 2 {two:?}");
}

#[test]
fn unsupervised_loss_falls() {
    for seed in 0..SEEDS {
        let d = gen_sbm_inductive(&SyntheticSpec::inductive(CALIBRATED_NOISE, seed)).unwrap();
        let (mcfg, cfg) = unsupervised_preset(d.graph.feature_dim(), "mean", seed);
        let (_, out) = unsupervised_f1(&d, &mcfg, &cfg, &LogisticConfig::default()).unwrap();
        let (first, last) = first_and_last_tenth(&out);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}
