use rand::RngCore;

use super::{check_params, concat_dense, glorot, zero_fallback, AggContext, Aggregator, AggregatorDims, LayerInput, NamedTensor};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// Each neighbour goes through a ReLU layer; the results are max-pooled
/// elementwise and concatenated with the node's own representation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolAggregator;

impl<F: Real> Aggregator<F> for PoolAggregator {
    fn name(&self) -> &'static str {
        "pool"
    }

    fn init_layer(
        &self,
        in_dim: usize,
        out_dim: usize,
        dims: &AggregatorDims,
        rng: &mut dyn RngCore,
    ) -> Vec<NamedTensor<F>> {
        vec![
            NamedTensor::new("pool_weight", glorot(in_dim, dims.pool_dim, rng)),
            NamedTensor::new("pool_bias", Tensor::zeros(1, dims.pool_dim)),
            NamedTensor::new("weight", glorot(in_dim + dims.pool_dim, out_dim, rng)),
        ]
    }

    fn layer_shapes(&self, in_dim: usize, out_dim: usize, dims: &AggregatorDims) -> Vec<(usize, usize)> {
        vec![
            (in_dim, dims.pool_dim),
            (1, dims.pool_dim),
            (in_dim + dims.pool_dim, out_dim),
        ]
    }

    fn forward(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        input: &LayerInput<'_>,
        ctx: &mut AggContext<'_>,
    ) -> Result<Var> {
        check_params(params, 3)?;
        input.validate()?;
        // The per-neighbour layer acts row-wise, so it is applied once to
        // every row of `prev` and the results gathered per target.
        let lin = tape.matmul(input.prev, params[0])?;
        let biased = tape.add_row(lin, params[1])?;
        let hidden = tape.relu(biased)?;
        let nb = tape.gather(hidden, input.neighbors)?;
        let pooled = tape.segment_max(nb, input.offsets)?;
        let pooled = zero_fallback(tape, input, pooled)?;
        concat_dense(tape, input, pooled, params[2], ctx.activation)
    }
}

/// Pooled neighbourhood vector alone, for inspection in tests.
#[cfg(test)]
fn pooled<F: Real>(h: Tensor<F>, w_pool: Tensor<F>, b: Tensor<F>, n: usize) -> Tensor<F> {
    let star = super::testutil::Star::new(n);
    let mut tape = Tape::new();
    let prev = tape.constant(h);
    let w = tape.constant(w_pool);
    let b = tape.constant(b);
    let lin = tape.matmul(prev, w).unwrap();
    let biased = tape.add_row(lin, b).unwrap();
    let hidden = tape.relu(biased).unwrap();
    let nb = tape.gather(hidden, &star.neighbors).unwrap();
    let p = tape.segment_max(nb, &star.offsets).unwrap();
    tape.value(p).clone()
}
