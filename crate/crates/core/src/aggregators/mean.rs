use rand::RngCore;

use super::{check_params, concat_dense, glorot, AggContext, Aggregator, AggregatorDims, LayerInput, NamedTensor};
use crate::autodiff::{Real, Tape, Var};
use crate::error::Result;

/// Elementwise mean of the neighbourhood, concatenated with the node's own
/// representation before the dense transform.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAggregator;

impl<F: Real> Aggregator<F> for MeanAggregator {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn init_layer(
        &self,
        in_dim: usize,
        out_dim: usize,
        _dims: &AggregatorDims,
        rng: &mut dyn RngCore,
    ) -> Vec<NamedTensor<F>> {
        vec![NamedTensor::new("weight", glorot(2 * in_dim, out_dim, rng))]
    }

    fn layer_shapes(&self, in_dim: usize, out_dim: usize, _dims: &AggregatorDims) -> Vec<(usize, usize)> {
        vec![(2 * in_dim, out_dim)]
    }

    fn forward(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        input: &LayerInput<'_>,
        ctx: &mut AggContext<'_>,
    ) -> Result<Var> {
        check_params(params, 1)?;
        input.validate()?;
        let nb = tape.gather(input.prev, input.neighbors)?;
        let mean = tape.segment_mean(nb, input.offsets)?;
        concat_dense(tape, input, mean, params[0], ctx.activation)
    }
}
