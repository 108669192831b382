//! End-to-end pipelines on the synthetic benchmarks: features-only
//! baseline, supervised and unsupervised training with held-out evaluation,
//! multi-graph generalisation and the inference-time comparison.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::baselines::{online_embed_new_nodes, train_skipgram_on, ContextMode, LookupEmbeddings, SkipgramConfig};
use crate::datagen::{Dataset, MultiDataset};
use crate::error::{Result, SageError};
use crate::eval::{fit_downstream_classifier, micro_f1, LogisticConfig};
use crate::graph::{Graph, LabelSet};
use crate::aggregators::Activation;
use crate::model::{predict, Model, ModelConfig};
use crate::train::{train, Mode, TrainConfig, TrainData, TrainOutput};

/// Batch size used when embedding held-out nodes.
pub const EMBED_BATCH: usize = 512;

/// Supervised settings for the synthetic benchmarks: K=2 with the default
/// sample sizes, 256 wide, lr 1e-2 over 10 epochs.
pub fn supervised_preset(input_dim: usize, aggregator: &str, seed: u64) -> (ModelConfig, TrainConfig) {
    let mut m = ModelConfig::new(input_dim).with_depth(2, 256);
    m.aggregator = aggregator.to_string();
    let t = TrainConfig {
        lr: 1e-2,
        seed,
        ..TrainConfig::new(Mode::Sup)
    };
    (m, t)
}

/// Unsupervised settings: 64 wide, linear last layer, lr 1e-3 for 100
/// steps of 512 walk pairs.
pub fn unsupervised_preset(input_dim: usize, aggregator: &str, seed: u64) -> (ModelConfig, TrainConfig) {
    let mut m = ModelConfig::new(input_dim).with_depth(2, 64);
    m.aggregator = aggregator.to_string();
    m.output_activation = Activation::Identity;
    let t = TrainConfig {
        lr: 1e-3,
        max_steps: Some(100),
        seed,
        ..TrainConfig::new(Mode::Unsup)
    };
    (m, t)
}

/// Graph restricted to `nodes`, with labels aligned to its indices.
fn restrict(d: &Dataset, nodes: &[usize]) -> Result<(Graph, LabelSet)> {
    Ok((d.graph.induced_subgraph(nodes)?, d.labels.select(nodes)))
}

/// Logistic regression on raw features of the training nodes, scored on the
/// test nodes.
pub fn features_only_f1(d: &Dataset, cfg: &LogisticConfig) -> Result<f64> {
    let x = d.graph.features();
    let clf = fit_downstream_classifier(&x.select_rows(&d.split.train), &d.labels.select(&d.split.train), cfg)?;
    let pred = clf.predict(&x.select_rows(&d.split.test))?;
    micro_f1(&pred, &d.labels.select(&d.split.test))
}

/// Trains on the subgraph of training nodes, validating on the subgraph of
/// training and validation nodes.
pub fn fit_inductive(d: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    let (g_train, y_train) = restrict(d, &d.split.train)?;
    let seen: Vec<usize> = d.split.train.iter().chain(&d.split.val).copied().collect();
    let (g_seen, y_seen) = restrict(d, &seen)?;
    let train_nodes: Vec<usize> = (0..g_train.node_count()).collect();
    let val_nodes: Vec<usize> = (d.split.train.len()..seen.len()).collect();
    let tr = TrainData {
        graph: &g_train,
        labels: Some(&y_train),
        nodes: &train_nodes,
    };
    let va = TrainData {
        graph: &g_seen,
        labels: Some(&y_seen),
        nodes: &val_nodes,
    };
    train(&tr, (!val_nodes.is_empty()).then_some(&va), model_cfg, cfg)
}

/// Supervised model trained without ever seeing test nodes, then applied to
/// them on the full graph.
pub fn supervised_f1(d: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(f64, TrainOutput)> {
    if cfg.mode != Mode::Sup {
        return Err(SageError::InvalidConfig("supervised pipeline needs mode sup".into()));
    }
    let out = fit_inductive(d, model_cfg, cfg)?;
    let z = out.model.embed_nodes(&d.graph, &d.split.test, EMBED_BATCH, cfg.seed)?;
    let truth = d.labels.select(&d.split.test);
    let pred = predict(&out.model.logits(&z)?, &truth)?;
    Ok((micro_f1(&pred, &truth)?, out))
}

/// Unsupervised embeddings of training and test nodes feed a downstream
/// classifier fit on the training nodes only.
pub fn unsupervised_f1(
    d: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    clf_cfg: &LogisticConfig,
) -> Result<(f64, TrainOutput)> {
    if cfg.mode != Mode::Unsup {
        return Err(SageError::InvalidConfig("unsupervised pipeline needs mode unsup".into()));
    }
    let out = fit_inductive(d, model_cfg, cfg)?;
    let z_train = out.model.embed_nodes(&d.graph, &d.split.train, EMBED_BATCH, cfg.seed)?;
    let z_test = out.model.embed_nodes(&d.graph, &d.split.test, EMBED_BATCH, cfg.seed ^ 1)?;
    let clf = fit_downstream_classifier(&z_train, &d.labels.select(&d.split.train), clf_cfg)?;
    let truth = d.labels.select(&d.split.test);
    Ok((micro_f1(&clf.predict(&z_test)?, &truth)?, out))
}

/// Disjoint union of the graphs `idx` of `m`, with their labels.
pub fn union(m: &MultiDataset, idx: &[usize]) -> Result<(Graph, LabelSet)> {
    let graphs: Vec<&Graph> = idx.iter().map(|&k| &m.graphs[k].graph).collect();
    let labels: Vec<&LabelSet> = idx.iter().map(|&k| &m.graphs[k].labels).collect();
    Ok((Graph::disjoint_union(&graphs)?, LabelSet::concat(&labels)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultigraphScores {
    pub features: f64,
    pub sage: f64,
}

/// Trains on the training graphs and scores on the unseen test graphs.
pub fn multigraph_f1(
    m: &MultiDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    clf_cfg: &LogisticConfig,
) -> Result<(MultigraphScores, TrainOutput)> {
    let (g_train, y_train) = union(m, &m.split.train)?;
    let (g_test, y_test) = union(m, &m.split.test)?;
    let clf = fit_downstream_classifier(g_train.features(), &y_train, clf_cfg)?;
    let features = micro_f1(&clf.predict(g_test.features())?, &y_test)?;

    let train_nodes: Vec<usize> = (0..g_train.node_count()).collect();
    let tr = TrainData {
        graph: &g_train,
        labels: Some(&y_train),
        nodes: &train_nodes,
    };
    let val = if m.split.val.is_empty() {
        None
    } else {
        Some(union(m, &m.split.val)?)
    };
    let val_nodes: Vec<usize> = (0..val.as_ref().map_or(0, |v| v.0.node_count())).collect();
    let va = val.as_ref().map(|(g, y)| TrainData {
        graph: g,
        labels: Some(y),
        nodes: &val_nodes,
    });
    let out = train(&tr, va.as_ref(), model_cfg, cfg)?;
    let test_nodes: Vec<usize> = (0..g_test.node_count()).collect();
    let sage = match cfg.mode {
        Mode::Sup => {
            let z = out.model.embed_nodes(&g_test, &test_nodes, EMBED_BATCH, cfg.seed)?;
            micro_f1(&predict(&out.model.logits(&z)?, &y_test)?, &y_test)?
        }
        Mode::Unsup => {
            let z_train = out.model.embed_nodes(&g_train, &train_nodes, EMBED_BATCH, cfg.seed)?;
            let z_test = out.model.embed_nodes(&g_test, &test_nodes, EMBED_BATCH, cfg.seed ^ 1)?;
            let c = fit_downstream_classifier(&z_train, &y_train, clf_cfg)?;
            micro_f1(&c.predict(&z_test)?, &y_test)?
        }
    };
    Ok((MultigraphScores { features, sage }, out))
}

/// A lookup-table method cannot place nodes of graphs it never saw.
pub fn deepwalk_multigraph(_m: &MultiDataset) -> Result<LookupEmbeddings> {
    Err(SageError::Unsupported(
        "DeepWalk learns one vector per training node and has no way to embed nodes of unseen graphs".into(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeComparison {
    pub nodes: usize,
    pub inductive: Duration,
    /// Always zero: inference borrows the parameters immutably.
    pub inductive_updates: usize,
    pub online: Duration,
    pub online_updates: usize,
    pub params_unchanged: bool,
}

impl RuntimeComparison {
    pub fn speedup(&self) -> f64 {
        self.online.as_secs_f64() / self.inductive.as_secs_f64().max(1e-9)
    }
}

/// Times embedding `new_nodes` of `g` with a trained model against an online
/// SGD round for a lookup table trained on the other nodes.
pub fn inductive_vs_online(
    model: &Model<f32>,
    g: &Graph,
    new_nodes: &[usize],
    lookup: &LookupEmbeddings,
    sg: &SkipgramConfig,
    seed: u64,
) -> Result<(RuntimeComparison, Tensor<f32>)> {
    let before = model.params.checksum();
    let t = Instant::now();
    let z = model.embed_nodes(g, new_nodes, EMBED_BATCH, seed)?;
    let inductive = t.elapsed();
    let params_unchanged = model.params.checksum() == before;
    let online = online_embed_new_nodes(lookup, g, new_nodes, ContextMode::Unrestricted, sg)?;
    Ok((
        RuntimeComparison {
            nodes: new_nodes.len(),
            inductive,
            inductive_updates: 0,
            online: online.elapsed,
            online_updates: online.steps,
            params_unchanged,
        },
        z,
    ))
}

/// Lookup table trained on `old` nodes of `g`, indexed by nodes of `g`.
pub fn lookup_on_old_nodes(g: &Graph, old: &[usize], sg: &SkipgramConfig) -> Result<LookupEmbeddings> {
    let sub = g.induced_subgraph(old)?;
    let nodes: Vec<usize> = (0..sub.node_count()).collect();
    let small = train_skipgram_on(&sub, &nodes, sg)?;
    let mut full = LookupEmbeddings {
        z: Tensor::zeros(g.node_count(), small.z.cols()),
        trainable: vec![false; g.node_count()],
    };
    for (i, &v) in old.iter().enumerate() {
        full.z.row_mut(v).copy_from_slice(small.z.row(i));
    }
    Ok(full)
}
