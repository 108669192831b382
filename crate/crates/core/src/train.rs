//! Adam and the minibatch training loop for both objectives.

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor};
use crate::error::{Result, SageError};
use crate::graph::{Graph, LabelSet};
use crate::model::{head_logits, supervised_loss, unsupervised_loss, HeadConfig, Model, ModelConfig};
use crate::sampler::{build_minibatch_plan, generate_walks_from, NegativeDistribution, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unsup,
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    /// Nodes (supervised) or positive pairs (unsupervised) per step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many parameter updates.
    pub max_steps: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub walks: WalkConfig,
    /// Each batch is split into this many shards whose gradients are summed
    /// in shard order, so results do not depend on the thread count.
    pub shards: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Upper bound on validation pairs in unsupervised mode.
    pub val_pairs: usize,
}

impl TrainConfig {
    /// Supervised: lr 1e-3, 10 epochs. Unsupervised: lr 2e-7, one pass over
    /// the walk pairs. Both use batches of 512.
    pub fn new(mode: Mode) -> Self {
        let (lr, epochs) = match mode {
            Mode::Sup => (1e-3, 10),
            Mode::Unsup => (2e-7, 1),
        };
        TrainConfig {
            mode,
            lr,
            batch_size: 512,
            epochs,
            max_steps: None,
            adam: AdamConfig::default(),
            seed: 0,
            walks: WalkConfig::default(),
            shards: 4,
            threads: 0,
            val_pairs: 2048,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.shards == 0 {
            return Err(SageError::InvalidConfig(
                "lr, batch size, epochs and shards must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Real> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let m: Vec<Tensor<F>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching anything.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(SageError::LengthMismatch {
            what: "adam tensors",
            expected: params.len(),
            got: grads.len().min(state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(SageError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(SageError::Divergence {
                step: state.step as usize,
                msg: format!("non-finite gradient for parameter {i}"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((x, &gi), (mi, vi)) in it {
            let gi = gi.as_f64();
            let mn = cfg.beta1 * mi.as_f64() + (1.0 - cfg.beta1) * gi;
            let vn = cfg.beta2 * vi.as_f64() + (1.0 - cfg.beta2) * gi * gi;
            *mi = F::of(mn);
            *vi = F::of(vn);
            let upd = lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            *x = F::of(x.as_f64() - upd);
        }
    }
    Ok(())
}

/// Nodes of a graph that take part in training or validation. Labels, when
/// present, are indexed by graph node.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a Graph,
    pub labels: Option<&'a LabelSet>,
    pub nodes: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model<f32>,
    pub history: Vec<EpochStats>,
    pub log: Vec<StepRecord>,
    pub steps: usize,
}

/// Training log as `step<TAB>loss<TAB>val_loss` lines; missing validation
/// values are left empty.
pub fn write_step_log<W: std::io::Write>(mut w: W, log: &[StepRecord]) -> Result<()> {
    writeln!(w, "step\tloss\tval_loss")?;
    for r in log {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{}\t{}\t{}", r.step, r.loss, val)?;
    }
    Ok(())
}

/// One unit of gradient work.
enum Shard {
    Nodes(Vec<usize>),
    Pairs(Vec<(usize, usize)>),
}

impl Shard {
    fn weight(&self) -> usize {
        match self {
            Shard::Nodes(v) => v.len(),
            Shard::Pairs(p) => p.len(),
        }
    }
}

struct ShardResult {
    loss: f64,
    grads: Vec<Tensor<f32>>,
}

/// Loss (and optionally gradients) of one shard.
fn shard_loss(
    model: &Model<f32>,
    data: &TrainData<'_>,
    shard: &Shard,
    negatives: &[usize],
    seed: u64,
    with_grad: bool,
) -> Result<ShardResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = data.graph;
    let nodes: Vec<usize> = match shard {
        Shard::Nodes(v) => v.clone(),
        Shard::Pairs(p) => p
            .iter()
            .flat_map(|&(u, v)| [u, v])
            .chain(negatives.iter().copied())
            .collect(),
    };
    let plan = build_minibatch_plan(g, &nodes, &model.config.sample_sizes, &mut rng)?;
    let row: HashMap<usize, usize> = plan.batch().iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut tape = Tape::new();
    let vars = model.params.load(&mut tape, with_grad);
    let z = model.forward_minibatch_on(&mut tape, &vars, g, &plan, &mut rng)?;
    let loss = match shard {
        Shard::Nodes(v) => {
            let labels = data.labels.ok_or_else(|| SageError::InvalidConfig("supervised mode needs labels".into()))?;
            let rows: Vec<usize> = v.iter().map(|n| row[n]).collect();
            let zb = tape.gather(z, &rows)?;
            let logits = head_logits(&mut tape, &vars, zb)?;
            supervised_loss(&mut tape, logits, &labels.select(v))?
        }
        Shard::Pairs(p) => {
            let us: Vec<usize> = p.iter().map(|(u, _)| row[u]).collect();
            let vs: Vec<usize> = p.iter().map(|(_, v)| row[v]).collect();
            let ns: Vec<usize> = negatives.iter().map(|n| row[n]).collect();
            let zu = tape.gather(z, &us)?;
            let zv = tape.gather(z, &vs)?;
            let zn = tape.gather(z, &ns)?;
            unsupervised_loss(&mut tape, zu, zv, zn)?
        }
    };
    let value = tape.value(loss).item() as f64;
    let grads = if with_grad {
        let mut gr = tape.backward(loss)?;
        vars.all()
            .into_iter()
            .zip(model.params.tensors())
            .map(|(var, t)| gr.take_or_zeros(var, t.rows(), t.cols()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(ShardResult { loss: value, grads })
}

/// Weighted mean of shard losses and gradients, reduced in shard order.
fn run_shards(
    model: &Model<f32>,
    data: &TrainData<'_>,
    shards: &[Shard],
    negatives: &[usize],
    seeds: &[u64],
    with_grad: bool,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let results: Vec<Result<ShardResult>> = shards
        .par_iter()
        .zip(seeds)
        .map(|(s, &seed)| shard_loss(model, data, s, negatives, seed, with_grad))
        .collect();
    let total: usize = shards.iter().map(Shard::weight).sum();
    let mut loss = 0.0;
    let mut grads: Vec<Tensor<f32>> = if with_grad {
        model.params.tensors().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    } else {
        Vec::new()
    };
    for (shard, r) in shards.iter().zip(results) {
        let r = r?;
        let w = shard.weight() as f64 / total as f64;
        loss += w * r.loss;
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += (w as f32) * x;
            }
        }
    }
    Ok((loss, grads))
}

fn split_shards<T: Clone>(items: &[T], shards: usize) -> Vec<Vec<T>> {
    let per = items.len().div_ceil(shards.max(1)).max(1);
    items.chunks(per).map(<[T]>::to_vec).collect()
}

fn as_divergence(step: usize, e: SageError) -> SageError {
    match e {
        SageError::NonFinite { op, node } => SageError::Divergence {
            step,
            msg: format!("non-finite value from {op} at node {node}"),
        },
        SageError::Divergence { msg, .. } => SageError::Divergence { step, msg },
        other => other,
    }
}

/// What a validation pass evaluates.
enum Validation<'a> {
    None,
    Sup(TrainData<'a>),
    Unsup {
        data: TrainData<'a>,
        pairs: Vec<(usize, usize)>,
        negatives: Vec<usize>,
    },
}

impl Validation<'_> {
    /// Mean loss without gradients, with fixed sampling seeds.
    fn loss(&self, model: &Model<f32>, cfg: &TrainConfig) -> Result<Option<f64>> {
        let seeds: Vec<u64> = (0..cfg.shards as u64).map(|i| cfg.seed ^ (0x7a1 + i)).collect();
        match self {
            Validation::None => Ok(None),
            Validation::Sup(d) => {
                let shards: Vec<Shard> = split_shards(d.nodes, cfg.shards).into_iter().map(Shard::Nodes).collect();
                Ok(Some(run_shards(model, d, &shards, &[], &seeds, false)?.0))
            }
            Validation::Unsup { data, pairs, negatives } => {
                let shards: Vec<Shard> = split_shards(pairs, cfg.shards).into_iter().map(Shard::Pairs).collect();
                Ok(Some(run_shards(model, data, &shards, negatives, &seeds, false)?.0))
            }
        }
    }
}

/// Trains a fresh model. Only `train.graph` is visible to the optimiser;
/// `val` is evaluated after every epoch without updating anything.
pub fn train(
    train: &TrainData<'_>,
    val: Option<&TrainData<'_>>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| SageError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| train_inner(train, val, model_cfg, cfg))
}

fn train_inner(
    train: &TrainData<'_>,
    val: Option<&TrainData<'_>>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mcfg = model_cfg.clone();
    if cfg.mode == Mode::Sup {
        let labels = train
            .labels
            .ok_or_else(|| SageError::InvalidConfig("supervised mode needs labels".into()))?;
        if mcfg.head.is_none() {
            mcfg.head = Some(HeadConfig {
                kind: labels.kind(),
                classes: labels.width(),
            });
        }
    }
    if train.nodes.is_empty() {
        return Err(SageError::Empty("training nodes"));
    }
    let mut model = Model::<f32>::init(mcfg, &mut rng)?;

    // unsupervised inputs: co-occurrence pairs and the negative distribution
    let mut pairs = Vec::new();
    let mut negs = None;
    if cfg.mode == Mode::Unsup {
        pairs = generate_walks_from(train.graph, train.nodes, &cfg.walks, &mut rng)?.pairs;
        if pairs.is_empty() {
            return Err(SageError::Empty("walk pairs"));
        }
        negs = Some(NegativeDistribution::new(train.graph, model.config.alpha)?);
        info!("{} co-occurrence pairs", pairs.len());
    }

    let validation = match (val, cfg.mode) {
        (None, _) => Validation::None,
        (Some(d), Mode::Sup) => Validation::Sup(*d),
        (Some(d), Mode::Unsup) => {
            let mut vr = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            let mut vp = generate_walks_from(d.graph, d.nodes, &cfg.walks, &mut vr)?.pairs;
            vp.shuffle(&mut vr);
            vp.truncate(cfg.val_pairs);
            if vp.is_empty() {
                Validation::None
            } else {
                let dist = NegativeDistribution::new(d.graph, model.config.alpha)?;
                let negatives = dist.draw_negatives(model.config.negatives, &mut vr);
                Validation::Unsup {
                    data: *d,
                    pairs: vp,
                    negatives,
                }
            }
        }
    };

    let mut state = OptimizerState::new(model.params.tensors());
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut order: Vec<usize> = train.nodes.to_vec();
    'epochs: for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut batches = 0usize;
        let units = match cfg.mode {
            Mode::Sup => order.len(),
            Mode::Unsup => pairs.len(),
        };
        match cfg.mode {
            Mode::Sup => order.shuffle(&mut rng),
            Mode::Unsup => pairs.shuffle(&mut rng),
        }
        for start in (0..units).step_by(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let end = (start + cfg.batch_size).min(units);
            let (shards, negatives): (Vec<Shard>, Vec<usize>) = match cfg.mode {
                Mode::Sup => (
                    split_shards(&order[start..end], cfg.shards).into_iter().map(Shard::Nodes).collect(),
                    Vec::new(),
                ),
                Mode::Unsup => {
                    let n = negs
                        .as_ref()
                        .expect("set in unsupervised mode")
                        .draw_negatives(model.config.negatives, &mut rng);
                    (
                        split_shards(&pairs[start..end], cfg.shards).into_iter().map(Shard::Pairs).collect(),
                        n,
                    )
                }
            };
            let seeds: Vec<u64> = shards.iter().map(|_| rng.random()).collect();
            let (loss, grads) = run_shards(&model, train, &shards, &negatives, &seeds, true)
                .map_err(|e| as_divergence(step, e))?;
            if !loss.is_finite() {
                return Err(SageError::Divergence {
                    step,
                    msg: format!("loss is {loss}"),
                });
            }
            let mut params: Vec<&mut Tensor<f32>> = model.params.tensors_mut().collect();
            adam_step(&mut params, &grads, &mut state, cfg.lr, &cfg.adam).map_err(|e| as_divergence(step, e))?;
            step += 1;
            sum += loss;
            batches += 1;
            debug!("step {step} loss {loss:.6}");
            log.push(StepRecord {
                step,
                loss,
                val_loss: None,
            });
        }
        if batches == 0 {
            break 'epochs;
        }
        let val_loss = validation.loss(&model, cfg)?;
        if let Some(last) = log.last_mut() {
            last.val_loss = val_loss;
        }
        let train_loss = sum / batches as f64;
        match val_loss {
            Some(v) => info!("epoch {} loss {train_loss:.6} val {v:.6}", epoch + 1),
            None => info!("epoch {} loss {train_loss:.6}", epoch + 1),
        }
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainOutput {
        model,
        history,
        log,
        steps: step,
    })
}
