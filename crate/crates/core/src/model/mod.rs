//! Embedding generation over full neighbourhoods or sampled minibatch plans,
//! plus the two training objectives and the model file format.

mod io;
mod loss;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{head_logits, predict, supervised_loss, unsupervised_loss, unsupervised_loss_value};

use std::hash::{Hash, Hasher};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregators::{self, Activation, AggContext, Aggregator, AggregatorDims, LayerInput, NamedTensor};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Result, SageError};
use crate::graph::{Graph, LabelKind};
use crate::sampler::MinibatchPlan;

/// Seed of the neighbour orderings used by order-sensitive aggregators at
/// inference time.
pub const INFERENCE_SEED: u64 = 0x5a6e_11fe;

/// Classification layer on top of the embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: LabelKind,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Number of aggregation depths, K.
    pub depth: usize,
    /// `sample_sizes[k - 1]` neighbours are drawn at depth `k`.
    pub sample_sizes: Vec<usize>,
    /// Output width of each depth.
    pub dims: Vec<usize>,
    pub aggregator: String,
    pub agg_dims: AggregatorDims,
    /// Negative samples per positive pair, Q.
    pub negatives: usize,
    /// Exponent of the degree-smoothed negative distribution.
    pub alpha: f64,
    pub normalize_output: bool,
    /// Non-linearity of every depth but the last.
    pub activation: Activation,
    /// Non-linearity of the last depth.
    #[serde(default)]
    pub output_activation: Activation,
    pub head: Option<HeadConfig>,
}

impl ModelConfig {
    /// Defaults: K = 2, sizes 25 and 10, width 256, mean aggregator.
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            depth: 2,
            sample_sizes: vec![25, 10],
            dims: vec![256, 256],
            aggregator: "mean".into(),
            agg_dims: AggregatorDims::default(),
            negatives: 20,
            alpha: 0.75,
            normalize_output: true,
            activation: Activation::Relu,
            output_activation: Activation::Relu,
            head: None,
        }
    }

    /// Sets the depth, repeating `dim` and truncating or padding the sample
    /// sizes with the last one.
    pub fn with_depth(mut self, depth: usize, dim: usize) -> Self {
        self.depth = depth;
        self.dims = vec![dim; depth];
        let last = self.sample_sizes.last().copied().unwrap_or(10);
        self.sample_sizes.resize(depth, last);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SageError::InvalidConfig(m));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if self.sample_sizes.len() != self.depth || self.dims.len() != self.depth {
            return bad(format!(
                "depth {} needs {} sample sizes and dims, got {} and {}",
                self.depth,
                self.depth,
                self.sample_sizes.len(),
                self.dims.len()
            ));
        }
        if self.sample_sizes.contains(&0) || self.dims.contains(&0) {
            return bad("sample sizes and dims must be >= 1".into());
        }
        if self.agg_dims.pool_dim == 0 || self.agg_dims.lstm_dim == 0 {
            return bad("aggregator widths must be >= 1".into());
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0".into());
        }
        if let Some(h) = self.head {
            if h.classes == 0 {
                return bad("head needs at least one class".into());
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(self.input_dim)
    }

    fn layer_in_dim(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.dims[k - 1]
        }
    }
}

/// All trainable tensors: per-depth aggregator parameters, then the head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Real> {
    pub layers: Vec<Vec<NamedTensor<F>>>,
    pub head: Vec<NamedTensor<F>>,
}

impl<F: Real> ModelParams<F> {
    pub fn init(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let agg = aggregators::create::<F>(&cfg.aggregator)?;
        let layers = (0..cfg.depth)
            .map(|k| agg.init_layer(cfg.layer_in_dim(k), cfg.dims[k], &cfg.agg_dims, rng))
            .collect();
        let head = match cfg.head {
            Some(h) => vec![
                NamedTensor::new("head_weight", aggregators::glorot(cfg.output_dim(), h.classes, rng)),
                NamedTensor::new("head_bias", Tensor::zeros(1, h.classes)),
            ],
            None => Vec::new(),
        };
        Ok(ModelParams { layers, head })
    }

    /// Expected shapes in declaration order.
    pub fn shapes(cfg: &ModelConfig) -> Result<Vec<(usize, usize)>> {
        let agg = aggregators::create::<F>(&cfg.aggregator)?;
        let mut s = Vec::new();
        for k in 0..cfg.depth {
            s.extend(agg.layer_shapes(cfg.layer_in_dim(k), cfg.dims[k], &cfg.agg_dims));
        }
        if let Some(h) = cfg.head {
            s.push((cfg.output_dim(), h.classes));
            s.push((1, h.classes));
        }
        Ok(s)
    }

    /// Tensors in declaration order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.layers
            .iter()
            .flatten()
            .chain(&self.head)
            .map(|p| &p.value)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.layers
            .iter_mut()
            .flatten()
            .chain(&mut self.head)
            .map(|p| &mut p.value)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            out.extend(layer.iter().map(|p| format!("layer{}.{}", k + 1, p.name)));
        }
        out.extend(self.head.iter().map(|p| p.name.clone()));
        out
    }

    /// Tensor counts per depth, then the head.
    pub fn layout(&self) -> (Vec<usize>, usize) {
        (self.layers.iter().map(Vec::len).collect(), self.head.len())
    }

    /// Rebuilds parameters of the same layout from flat tensors.
    pub fn with_tensors(&self, flat: Vec<Tensor<F>>) -> Result<Self> {
        let total: usize = self.tensors().count();
        if flat.len() != total {
            return Err(SageError::LengthMismatch {
                what: "parameter tensors",
                expected: total,
                got: flat.len(),
            });
        }
        let mut out = self.clone();
        for (dst, src) in out.tensors_mut().zip(flat) {
            if dst.shape() != src.shape() {
                return Err(SageError::ShapeMismatch {
                    op: "with_tensors",
                    left: dst.shape(),
                    right: src.shape(),
                });
            }
            *dst = src;
        }
        Ok(out)
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let conv = |v: &Vec<NamedTensor<F>>| {
            v.iter()
                .map(|p| NamedTensor::new(p.name.clone(), p.value.cast()))
                .collect::<Vec<_>>()
        };
        ModelParams {
            layers: self.layers.iter().map(conv).collect(),
            head: conv(&self.head),
        }
    }

    /// Hash of every parameter bit pattern, for detecting mutation.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.tensors() {
            t.shape().hash(&mut h);
            for x in t.data() {
                x.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Puts every tensor on `tape`, as trainable leaves or as constants.
    pub fn load(&self, tape: &mut Tape<F>, trainable: bool) -> ParamVars {
        let mut put = |t: &Tensor<F>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(|p| put(&p.value)).collect())
                .collect(),
            head: self.head.iter().map(|p| put(&p.value)).collect(),
        }
    }
}

/// Tape handles of the parameters, grouped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamVars {
    pub layers: Vec<Vec<Var>>,
    pub head: Vec<Var>,
}

impl ParamVars {
    /// Groups flat handles by a [`ModelParams::layout`].
    pub fn from_flat(layout: &(Vec<usize>, usize), flat: &[Var]) -> Result<Self> {
        let total = layout.0.iter().sum::<usize>() + layout.1;
        if flat.len() != total {
            return Err(SageError::LengthMismatch {
                what: "parameter handles",
                expected: total,
                got: flat.len(),
            });
        }
        let mut at = 0;
        let layers = layout
            .0
            .iter()
            .map(|&n| {
                at += n;
                flat[at - n..at].to_vec()
            })
            .collect();
        Ok(ParamVars {
            layers,
            head: flat[at..].to_vec(),
        })
    }

    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flatten().chain(&self.head).copied().collect()
    }
}

/// A configured aggregator stack with its parameters.
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
    agg: Box<dyn Aggregator<F>>,
}

impl<F: Real> Clone for Model<F> {
    fn clone(&self) -> Self {
        Model::new(self.config.clone(), self.params.clone()).expect("already validated")
    }
}

impl<F: Real> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.count())
            .finish()
    }
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, params: ModelParams<F>) -> Result<Self> {
        config.validate()?;
        let agg = aggregators::create::<F>(&config.aggregator)?;
        let want = ModelParams::<F>::shapes(&config)?;
        let got: Vec<_> = params.tensors().map(Tensor::shape).collect();
        if want != got {
            return Err(SageError::InvalidConfig(format!(
                "parameter shapes {got:?} do not match configuration {want:?}"
            )));
        }
        Ok(Model { config, params, agg })
    }

    pub fn init(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Model::new(config, params)
    }

    pub fn aggregator(&self) -> &dyn Aggregator<F> {
        self.agg.as_ref()
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.config.input_dim {
            return Err(SageError::ShapeMismatch {
                op: "model input",
                left: (g.node_count(), g.feature_dim()),
                right: (g.node_count(), self.config.input_dim),
            });
        }
        Ok(())
    }

    /// Applies one depth and the optional normalisation. `prev` has one row
    /// per node of the previous frontier; `lists[i]` are rows of `prev`, or
    /// `None` for an isolated target.
    fn depth_step(
        &self,
        tape: &mut Tape<F>,
        depth: usize,
        vars: &[Var],
        prev: Var,
        targets: usize,
        lists: &mut dyn Iterator<Item = Option<Vec<usize>>>,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let (m, d) = tape.shape(prev);
        let zero = tape.constant(Tensor::zeros(1, d));
        let padded = tape.concat_rows(&[prev, zero])?;
        let mut offsets = Vec::with_capacity(targets + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in lists {
            match list {
                Some(l) => neighbors.extend(l),
                None => neighbors.push(m),
            }
            offsets.push(neighbors.len());
        }
        let self_rows: Vec<usize> = (0..targets).collect();
        let input = LayerInput {
            prev: padded,
            self_rows: &self_rows,
            offsets: &offsets,
            neighbors: &neighbors,
            fallback: Some(m),
        };
        let activation = if depth == self.config.depth {
            self.config.output_activation
        } else {
            self.config.activation
        };
        let mut ctx = AggContext { activation, rng };
        let h = self.agg.forward(tape, vars, &input, &mut ctx)?;
        if self.config.normalize_output {
            tape.normalize_rows(h)
        } else {
            Ok(h)
        }
    }

    /// Depth-K representations of every node using complete neighbourhoods.
    pub fn forward_full_on(
        &self,
        tape: &mut Tape<F>,
        vars: &ParamVars,
        g: &Graph,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.check_graph(g)?;
        let n = g.node_count();
        let mut h = tape.constant(g.features().cast());
        for k in 0..self.config.depth {
            let mut lists = (0..n).map(|v| {
                let nb = g.neighbors(v);
                (!nb.is_empty()).then(|| nb.to_vec())
            });
            h = self.depth_step(tape, k + 1, &vars.layers[k], h, n, &mut lists, rng)?;
        }
        Ok(h)
    }

    /// Depth-K representations of the plan's batch, computed only over the
    /// sampled frontiers.
    pub fn forward_minibatch_on(
        &self,
        tape: &mut Tape<F>,
        vars: &ParamVars,
        g: &Graph,
        plan: &MinibatchPlan,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.check_graph(g)?;
        if plan.depth() != self.config.depth {
            return Err(SageError::InvalidConfig(format!(
                "plan depth {} does not match model depth {}",
                plan.depth(),
                self.config.depth
            )));
        }
        for &v in &plan.frontiers[0] {
            g.check_node(v)?;
        }
        let base = g.features().select_rows(&plan.frontiers[0]);
        let mut h = tape.constant(base.cast());
        for k in 1..=self.config.depth {
            let layer = &plan.layers[k - 1];
            let targets = &plan.frontiers[k];
            let mut lists = targets.iter().enumerate().map(|(i, &u)| {
                (g.degree(u) > 0)
                    .then(|| layer.positions[layer.offsets[i]..layer.offsets[i + 1]].to_vec())
            });
            h = self.depth_step(tape, k, &vars.layers[k - 1], h, targets.len(), &mut lists, rng)?;
        }
        Ok(h)
    }

    /// Embeddings of every node of `g`, without sampling.
    pub fn forward_full(&self, g: &Graph) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.params.load(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(INFERENCE_SEED);
        let z = self.forward_full_on(&mut tape, &vars, g, &mut rng)?;
        Ok(tape.value(z).clone())
    }

    /// Embeddings of `plan.batch()`, in that order.
    pub fn forward_minibatch(&self, g: &Graph, plan: &MinibatchPlan) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.params.load(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(INFERENCE_SEED);
        let z = self.forward_minibatch_on(&mut tape, &vars, g, plan, &mut rng)?;
        Ok(tape.value(z).clone())
    }

    /// Embeddings of `nodes` (in order, duplicates allowed) by sampled
    /// minibatches of at most `batch_size` nodes.
    pub fn embed_nodes(&self, g: &Graph, nodes: &[usize], batch_size: usize, seed: u64) -> Result<Tensor<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.output_dim();
        let mut out = Tensor::zeros(nodes.len(), d);
        let mut row = 0;
        for chunk in nodes.chunks(batch_size.max(1)) {
            let plan = crate::sampler::build_minibatch_plan(g, chunk, &self.config.sample_sizes, &mut rng)?;
            let z = self.forward_minibatch(g, &plan)?;
            let at: std::collections::HashMap<usize, usize> =
                plan.batch().iter().enumerate().map(|(i, &v)| (v, i)).collect();
            for &v in chunk {
                out.row_mut(row).copy_from_slice(z.row(at[&v]));
                row += 1;
            }
        }
        Ok(out)
    }

    /// Class scores of precomputed embeddings.
    pub fn logits(&self, z: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.params.load(&mut tape, false);
        let zv = tape.constant(z.clone());
        let l = head_logits(&mut tape, &vars, zv)?;
        Ok(tape.value(l).clone())
    }
}

#[cfg(test)]
mod tests;
