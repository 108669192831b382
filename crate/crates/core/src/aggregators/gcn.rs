use rand::RngCore;

use super::{check_params, glorot, AggContext, Aggregator, AggregatorDims, LayerInput, NamedTensor};
use crate::autodiff::{Real, Tape, Var};
use crate::error::Result;

/// Mean over the node together with its neighbours, followed by a dense
/// transform. There is no separate self path, so no concatenation. An
/// isolated node averages over itself alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct GcnAggregator;

impl<F: Real> Aggregator<F> for GcnAggregator {
    fn name(&self) -> &'static str {
        "gcn"
    }

    fn init_layer(
        &self,
        in_dim: usize,
        out_dim: usize,
        _dims: &AggregatorDims,
        rng: &mut dyn RngCore,
    ) -> Vec<NamedTensor<F>> {
        vec![NamedTensor::new("weight", glorot(in_dim, out_dim, rng))]
    }

    fn layer_shapes(&self, in_dim: usize, out_dim: usize, _dims: &AggregatorDims) -> Vec<(usize, usize)> {
        vec![(in_dim, out_dim)]
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
        let mut rows = Vec::with_capacity(input.neighbors.len() + input.targets());
        let mut offsets = Vec::with_capacity(input.targets() + 1);
        offsets.push(0);
        for i in 0..input.targets() {
            rows.push(input.self_rows[i]);
            let nb = input.neighbors_of(i);
            if !(nb.len() == 1 && Some(nb[0]) == input.fallback) {
                rows.extend_from_slice(nb);
            }
            offsets.push(rows.len());
        }
        let all = tape.gather(input.prev, &rows)?;
        let mean = tape.segment_mean(all, &offsets)?;
        let lin = tape.matmul(mean, params[0])?;
        ctx.activation.apply(tape, lin)
    }
}
