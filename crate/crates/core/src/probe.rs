//! Empirical probes: regressing clustering coefficients with a pool
//! aggregator stack, and benchmark accuracy as feature rows are replaced by
//! noise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregators::glorot;
use crate::autodiff::{Tape, Tensor, Var};
use crate::datagen::{gen_gnp, Dataset};
use crate::error::{Result, SageError};
use crate::experiments::supervised_preset;
use crate::graph::{clustering_coefficient, Graph};
use crate::model::{Model, ModelConfig};
use crate::train::{adam_step, AdamConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub depth: usize,
    pub dim: usize,
    pub pool_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            depth: 4,
            dim: 32,
            pool_dim: 32,
            epochs: 150,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub mse: f64,
    /// Test error of always predicting the mean training coefficient.
    pub baseline_mse: f64,
    /// Every node of the family has the same coefficient; nothing was fit.
    pub skipped: bool,
}

impl ProbeReport {
    pub fn ratio(&self) -> f64 {
        if self.baseline_mse > 0.0 {
            self.mse / self.baseline_mse
        } else {
            f64::NAN
        }
    }
}

/// `count` graphs G(n, p), each with its own i.i.d. Gaussian features.
pub fn gnp_family(count: usize, n: usize, p: f64, feature_dim: usize, seed: u64) -> Result<Vec<Graph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| gen_gnp(n, p, feature_dim, &mut rng)).collect()
}

fn targets(g: &Graph) -> Tensor<f64> {
    let c = (0..g.node_count()).map(|v| clustering_coefficient(g, v).value).collect();
    Tensor::from_vec(g.node_count(), 1, c).expect("one value per node")
}

fn mse(pred: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    pred.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.rows().max(1) as f64
}

/// Regresses every node's clustering coefficient from a pool aggregator
/// stack plus a linear read-out, trained by full-graph Adam on `train` and
/// scored on `test`.
pub fn theorem1_probe(train: &[Graph], test: &[Graph], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if train.is_empty() || test.is_empty() {
        return Err(SageError::Empty("probe graph"));
    }
    let ys: Vec<Tensor<f64>> = train.iter().map(targets).collect();
    let ys_test: Vec<Tensor<f64>> = test.iter().map(targets).collect();
    let all: Vec<f64> = ys.iter().chain(&ys_test).flat_map(|t| t.data().to_vec()).collect();
    if all.iter().all(|&c| c == all[0]) {
        return Ok(ProbeReport {
            mse: 0.0,
            baseline_mse: 0.0,
            skipped: true,
        });
    }
    let n_train: usize = ys.iter().map(|t| t.rows()).sum();
    let mean = ys.iter().flat_map(|t| t.data()).sum::<f64>() / n_train as f64;
    let n_test: usize = ys_test.iter().map(|t| t.rows()).sum();
    let baseline_mse = ys_test.iter().flat_map(|t| t.data()).map(|c| (c - mean) * (c - mean)).sum::<f64>() / n_test as f64;

    let mut mcfg = ModelConfig::new(train[0].feature_dim()).with_depth(cfg.depth, cfg.dim);
    mcfg.aggregator = "pool".into();
    mcfg.agg_dims.pool_dim = cfg.pool_dim;
    mcfg.normalize_output = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model: Model<f64> = Model::init(mcfg, &mut rng)?;
    let mut head_w: Tensor<f64> = glorot(cfg.dim, 1, &mut rng);
    let mut head_b: Tensor<f64> = Tensor::from_vec(1, 1, vec![mean])?;

    let adam = AdamConfig::default();
    let mut state = OptimizerState::new(model.params.tensors().chain([&head_w, &head_b]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let mut tape = Tape::new();
            let vars = model.params.load(&mut tape, true);
            let w = tape.param(head_w.clone());
            let b = tape.param(head_b.clone());
            let pred = readout(&mut tape, &model, &vars, w, b, &train[i], &mut rng)?;
            let y = tape.constant(ys[i].clone());
            let diff = tape.sub(pred, y)?;
            let sq = tape.mul(diff, diff)?;
            let loss = tape.mean(sq)?;
            let grads = tape.backward(loss)?;
            let mut order_vars = vars.all();
            order_vars.extend([w, b]);
            let gs: Vec<Tensor<f64>> = order_vars
                .iter()
                .map(|&v| grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.shape(v);
                    Tensor::zeros(r, c)
                }))
                .collect();
            let mut params: Vec<&mut Tensor<f64>> = model.params.tensors_mut().collect();
            params.push(&mut head_w);
            params.push(&mut head_b);
            adam_step(&mut params, &gs, &mut state, cfg.lr, &adam)?;
        }
    }

    let mut err = 0.0;
    for (g, y) in test.iter().zip(&ys_test) {
        let mut tape = Tape::new();
        let vars = model.params.load(&mut tape, false);
        let w = tape.constant(head_w.clone());
        let b = tape.constant(head_b.clone());
        let pred = readout(&mut tape, &model, &vars, w, b, g, &mut rng)?;
        err += mse(tape.value(pred), y) * y.rows() as f64;
    }
    Ok(ProbeReport {
        mse: err / n_test as f64,
        baseline_mse,
        skipped: false,
    })
}

fn readout(
    tape: &mut Tape<f64>,
    model: &Model<f64>,
    vars: &crate::model::ParamVars,
    w: Var,
    b: Var,
    g: &Graph,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let h = model.forward_full_on(tape, vars, g, rng)?;
    let s = tape.matmul(h, w)?;
    tape.add_row(s, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub fraction: f64,
    pub aggregator: String,
    pub f1: f64,
}

/// Copy of `d` with `round(fraction * n)` feature rows, chosen by `seed`,
/// replaced by standard normal noise.
pub fn noisy_features(d: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SageError::InvalidConfig(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let n = d.graph.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let k = (fraction * n as f64).round() as usize;
    let mut x = d.graph.features().clone();
    for &v in &rows[..k] {
        for c in x.row_mut(v) {
            *c = StandardNormal.sample(&mut rng);
        }
    }
    Ok(Dataset {
        graph: d.graph.with_features(x)?,
        ..d.clone()
    })
}

/// Supervised test micro-F1 per noise fraction and aggregator, with the
/// benchmark preset narrowed to `dim`.
pub fn noise_sweep(
    d: &Dataset,
    fractions: &[f64],
    aggregators: &[&str],
    dim: usize,
    seed: u64,
) -> Result<Vec<NoisePoint>> {
    let mut out = Vec::new();
    for &fraction in fractions {
        let noisy = noisy_features(d, fraction, seed)?;
        for &agg in aggregators {
            let (mcfg, tcfg) = supervised_preset(d.graph.feature_dim(), agg, seed);
            let mcfg = ModelConfig {
                dims: vec![dim; mcfg.depth],
                ..mcfg
            };
            let (f1, _) = crate::experiments::supervised_f1(&noisy, &mcfg, &tcfg)?;
            out.push(NoisePoint {
                fraction,
                aggregator: agg.to_string(),
                f1,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_sbm_inductive, SyntheticSpec};
    use crate::experiments::supervised_f1;

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                e.push((u, v));
            }
        }
        let x = Tensor::from_vec(n, 2, (0..2 * n).map(|i| i as f32).collect()).unwrap();
        Graph::from_indices(n, &e, x).unwrap()
    }

    #[test]
    fn complete_graphs_are_skipped() {
        let fam: Vec<Graph> = (4..8).map(complete).collect();
        let r = theorem1_probe(&fam[..3], &fam[3..], &ProbeConfig::default()).unwrap();
        assert!(r.skipped);
        assert_eq!(r.baseline_mse, 0.0);
    }

    #[test]
    fn empty_family_is_an_error() {
        let fam = gnp_family(1, 10, 0.3, 4, 0).unwrap();
        assert!(theorem1_probe(&fam, &[], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn short_probe_runs_end_to_end() {
        let fam = gnp_family(6, 20, 0.3, 4, 1).unwrap();
        let cfg = ProbeConfig {
            depth: 2,
            dim: 8,
            pool_dim: 8,
            epochs: 3,
            ..ProbeConfig::default()
        };
        let r = theorem1_probe(&fam[..4], &fam[4..], &cfg).unwrap();
        assert!(!r.skipped);
        assert!(r.mse.is_finite() && r.baseline_mse > 0.0);
    }

    fn small(p_out: f64) -> Dataset {
        let spec = SyntheticSpec {
            nodes: 200,
            p_out,
            ..SyntheticSpec::inductive(1.0, 4)
        };
        gen_sbm_inductive(&spec).unwrap()
    }

    #[test]
    fn noise_rows_count_and_range() {
        let d = small(0.005);
        assert!(noisy_features(&d, 1.5, 0).is_err());
        let same = noisy_features(&d, 0.0, 0).unwrap();
        assert_eq!(same.graph.features(), d.graph.features());
        let half = noisy_features(&d, 0.5, 0).unwrap();
        let changed = (0..200)
            .filter(|&v| half.graph.features().row(v) != d.graph.features().row(v))
            .count();
        assert_eq!(changed, 100);
        assert_eq!(half.graph.edge_count(), d.graph.edge_count());
    }

    #[test]
    fn zero_fraction_matches_the_plain_run() {
        let d = small(0.005);
        let pts = noise_sweep(&d, &[0.0], &["mean"], 8, 3).unwrap();
        let (mcfg, tcfg) = supervised_preset(50, "mean", 3);
        let mcfg = ModelConfig {
            dims: vec![8, 8],
            ..mcfg
        };
        let (f1, _) = supervised_f1(&d, &mcfg, &tcfg).unwrap();
        assert_eq!(pts[0].f1, f1);
    }
}
