//! Neighbourhood aggregation architectures.
//!
//! Each architecture implements [`Aggregator`] and is registered by name in an
//! [`AggregatorRegistry`]; models look their aggregator up at run time, so a
//! new architecture only needs an implementation and a `register` call.

mod gcn;
mod hash;
mod lstm;
mod mean;
mod pool;

pub use gcn::GcnAggregator;
pub use hash::wl_hash_embed;
pub use lstm::LstmAggregator;
pub use mean::MeanAggregator;
pub use pool::PoolAggregator;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Result, SageError};

/// Non-linearity applied after each dense transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<F: Real>(self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Architecture-specific widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorDims {
    /// Hidden width of the per-neighbour layer of the pooling aggregator.
    pub pool_dim: usize,
    /// Hidden state width of the LSTM aggregator.
    pub lstm_dim: usize,
}

impl Default for AggregatorDims {
    fn default() -> Self {
        AggregatorDims {
            pool_dim: 512,
            lstm_dim: 128,
        }
    }
}

/// One depth of neighbourhood aggregation, expressed over rows of `prev`.
///
/// Target `i` has its own previous representation at row `self_rows[i]` and
/// its (non-empty) neighbourhood at rows
/// `neighbors[offsets[i]..offsets[i + 1]]`.
///
/// Isolated nodes have no neighbours; their list is the single row
/// `fallback`, an all-zero row of `prev`.
#[derive(Debug, Clone, Copy)]
pub struct LayerInput<'a> {
    pub prev: Var,
    pub self_rows: &'a [usize],
    pub offsets: &'a [usize],
    pub neighbors: &'a [usize],
    pub fallback: Option<usize>,
}

impl LayerInput<'_> {
    pub fn targets(&self) -> usize {
        self.self_rows.len()
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.self_rows.len() + 1 {
            return Err(SageError::LengthMismatch {
                what: "neighbour offsets",
                expected: self.self_rows.len() + 1,
                got: self.offsets.len(),
            });
        }
        if self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SageError::InvalidConfig(
                "every target needs a non-empty neighbour list".into(),
            ));
        }
        Ok(())
    }
}

/// Per-call state shared by all aggregators.
pub struct AggContext<'r> {
    pub activation: Activation,
    /// Only order-sensitive aggregators draw from this.
    pub rng: &'r mut dyn RngCore,
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<F: Real> {
    pub name: String,
    pub value: Tensor<F>,
}

impl<F: Real> NamedTensor<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        NamedTensor {
            name: name.into(),
            value,
        }
    }
}

/// Symmetric uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<F: Real>(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches")
}

/// A neighbourhood aggregation architecture: produces the activated, not yet
/// normalised, depth-k representation of every target.
pub trait Aggregator<F: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fresh parameters for one depth mapping `in_dim` to `out_dim`.
    fn init_layer(
        &self,
        in_dim: usize,
        out_dim: usize,
        dims: &AggregatorDims,
        rng: &mut dyn RngCore,
    ) -> Vec<NamedTensor<F>>;

    /// Expected parameter shapes, in `init_layer` order.
    fn layer_shapes(&self, in_dim: usize, out_dim: usize, dims: &AggregatorDims) -> Vec<(usize, usize)>;

    fn forward(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        input: &LayerInput<'_>,
        ctx: &mut AggContext<'_>,
    ) -> Result<Var>;

    /// Whether the output is independent of neighbour order.
    fn symmetric(&self) -> bool {
        true
    }
}

fn check_params(params: &[Var], expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(SageError::LengthMismatch {
            what: "aggregator parameters",
            expected,
            got: params.len(),
        });
    }
    Ok(())
}

/// `[self ; neighbourhood] * W`, then the activation.
fn concat_dense<F: Real>(
    tape: &mut Tape<F>,
    input: &LayerInput<'_>,
    neigh: Var,
    weight: Var,
    act: Activation,
) -> Result<Var> {
    let own = tape.gather(input.prev, input.self_rows)?;
    let cat = tape.concat_cols(own, neigh)?;
    let lin = tape.matmul(cat, weight)?;
    act.apply(tape, lin)
}

/// Zeroes the neighbourhood vector of targets whose only neighbour is the
/// fallback row, so isolated nodes contribute nothing beyond themselves.
fn zero_fallback<F: Real>(tape: &mut Tape<F>, input: &LayerInput<'_>, neigh: Var) -> Result<Var> {
    let Some(f) = input.fallback else { return Ok(neigh) };
    let isolated: Vec<usize> = (0..input.targets()).filter(|&i| input.neighbors_of(i) == [f]).collect();
    if isolated.is_empty() {
        return Ok(neigh);
    }
    let (rows, cols) = tape.shape(neigh);
    let mut mask = Tensor::from_vec(rows, cols, vec![F::one(); rows * cols])?;
    for i in isolated {
        mask.row_mut(i).fill(F::zero());
    }
    let mask = tape.constant(mask);
    tape.mul(neigh, mask)
}

pub type AggregatorFactory<F> = fn() -> Box<dyn Aggregator<F>>;

/// Name-indexed collection of aggregator constructors.
pub struct AggregatorRegistry<F> {
    entries: Vec<(&'static str, AggregatorFactory<F>)>,
}

impl<F: Real> Default for AggregatorRegistry<F> {
    fn default() -> Self {
        Self::builtin()
    }
}

impl<F: Real> AggregatorRegistry<F> {
    pub fn empty() -> Self {
        AggregatorRegistry { entries: Vec::new() }
    }

    /// Registry holding `mean`, `gcn`, `pool` and `lstm`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("mean", || Box::new(MeanAggregator));
        r.register("gcn", || Box::new(GcnAggregator));
        r.register("pool", || Box::new(PoolAggregator));
        r.register("lstm", || Box::new(LstmAggregator));
        r
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, name: &'static str, factory: AggregatorFactory<F>) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = factory,
            None => self.entries.push((name, factory)),
        }
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Aggregator<F>>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f())
            .ok_or_else(|| SageError::UnknownAggregator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

/// Looks `name` up in the built-in registry.
pub fn create<F: Real>(name: &str) -> Result<Box<dyn Aggregator<F>>> {
    AggregatorRegistry::builtin().create(name)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_builtins_by_name() {
        let r = AggregatorRegistry::<f32>::builtin();
        assert_eq!(r.names(), vec!["mean", "gcn", "pool", "lstm"]);
        for n in r.names() {
            assert_eq!(r.create(n).unwrap().name(), n);
        }
        assert!(matches!(r.create("attention"), Err(SageError::UnknownAggregator(_))));
    }

    #[test]
    fn registry_accepts_custom_entries() {
        let mut r = AggregatorRegistry::<f64>::empty();
        r.register("avg", || Box::new(MeanAggregator));
        assert_eq!(r.create("avg").unwrap().name(), "mean");
        assert!(r.create("mean").is_err());
    }

    #[test]
    fn empty_neighbourhood_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let prev = tape.constant(Tensor::zeros(1, 1));
        let input = LayerInput {
            prev,
            self_rows: &[0],
            offsets: &[0, 0],
            neighbors: &[],
            fallback: None,
        };
        assert!(input.validate().is_err());
    }
}
