//! Finite-difference verification of whole models: every registered
//! aggregator stacked two deep, under both training objectives.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorRegistry;
use crate::autodiff::{grad_check, GradCheckReport, Tensor};
use crate::datagen::gen_gnp;
use crate::error::Result;
use crate::graph::{LabelKind, LabelSet};
use crate::model::{head_logits, supervised_loss, unsupervised_loss, HeadConfig, Model, ModelConfig, ParamVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Unsup,
    Sup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub aggregator: String,
    pub objective: Objective,
    pub seed: u64,
    pub max_rel_error: f64,
}

const NODES: usize = 8;
const CLASSES: usize = 3;

/// Checks a depth-2 model with aggregator `name` on a small random graph.
pub fn model_grad_check(name: &str, objective: Objective, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gen_gnp(NODES, 0.4, 3, &mut rng)?;
    let mut cfg = ModelConfig::new(3);
    cfg.dims = vec![4, 3];
    cfg.aggregator = name.to_string();
    cfg.agg_dims.pool_dim = 4;
    cfg.agg_dims.lstm_dim = 3;
    if objective == Objective::Sup {
        cfg.head = Some(HeadConfig {
            kind: LabelKind::Single,
            classes: CLASSES,
        });
    }
    let model: Model<f64> = Model::init(cfg, &mut rng)?;
    let labels = LabelSet::single(CLASSES, (0..NODES).map(|_| rng.random_range(0..CLASSES)).collect())?;
    let layout = model.params.layout();
    // Zero biases and exactly dead rows put ReLU inputs on the kink, so the
    // check runs at a jittered, generic point instead of the raw init.
    let mut params: Vec<Tensor<f64>> = model.params.tensors().cloned().collect();
    for x in params.iter_mut().flat_map(|t| t.data_mut().iter_mut()) {
        let e: f64 = StandardNormal.sample(&mut rng);
        *x += 0.1 * e;
    }
    grad_check(
        |tape, vars| {
            let pv = ParamVars::from_flat(&layout, vars)?;
            let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
            let z = model.forward_full_on(tape, &pv, &g, &mut order_rng)?;
            match objective {
                Objective::Unsup => {
                    let zu = tape.gather(z, &[0, 1, 2])?;
                    let zv = tape.gather(z, &[1, 2, 3])?;
                    let neg = tape.gather(z, &[4, 5, 6, 7])?;
                    unsupervised_loss(tape, zu, zv, neg)
                }
                Objective::Sup => {
                    let logits = head_logits(tape, &pv, z)?;
                    supervised_loss(tape, logits, &labels)
                }
            }
        },
        &params,
        step,
    )
}

/// Every registered aggregator under both objectives for seeds `0..seeds`.
pub fn gradient_suite(seeds: u64, step: f64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for name in AggregatorRegistry::<f64>::builtin().names() {
        for objective in [Objective::Unsup, Objective::Sup] {
            for seed in 0..seeds {
                let r = model_grad_check(name, objective, seed, step)?;
                out.push(GradCase {
                    aggregator: name.to_string(),
                    objective,
                    seed,
                    max_rel_error: r.max_rel_error,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_layer_with_unsupervised_loss_checks_out() {
        let r = model_grad_check("mean", Objective::Unsup, 0, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn lstm_composite_checks_out() {
        let r = model_grad_check("lstm", Objective::Sup, 1, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
