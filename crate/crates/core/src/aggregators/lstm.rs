use rand::seq::SliceRandom;
use rand::RngCore;

use super::{check_params, concat_dense, glorot, zero_fallback, AggContext, Aggregator, AggregatorDims, LayerInput, NamedTensor};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::Result;

const GATES: [&str; 4] = ["input", "forget", "output", "cell"];

/// Runs an LSTM over a random ordering of each neighbourhood and uses the
/// final hidden state as the neighbourhood vector. Not permutation invariant.
#[derive(Debug, Clone, Copy, Default)]
pub struct LstmAggregator;

impl<F: Real> Aggregator<F> for LstmAggregator {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn init_layer(
        &self,
        in_dim: usize,
        out_dim: usize,
        dims: &AggregatorDims,
        rng: &mut dyn RngCore,
    ) -> Vec<NamedTensor<F>> {
        let hid = dims.lstm_dim;
        let mut out = Vec::with_capacity(9);
        for g in GATES {
            out.push(NamedTensor::new(format!("{g}_weight"), glorot(in_dim + hid, hid, rng)));
            let mut b = Tensor::zeros(1, hid);
            if g == "forget" {
                b.data_mut().fill(F::one());
            }
            out.push(NamedTensor::new(format!("{g}_bias"), b));
        }
        out.push(NamedTensor::new("weight", glorot(in_dim + hid, out_dim, rng)));
        out
    }

    fn layer_shapes(&self, in_dim: usize, out_dim: usize, dims: &AggregatorDims) -> Vec<(usize, usize)> {
        let hid = dims.lstm_dim;
        let mut s = Vec::with_capacity(9);
        for _ in GATES {
            s.push((in_dim + hid, hid));
            s.push((1, hid));
        }
        s.push((in_dim + hid, out_dim));
        s
    }

    fn forward(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        input: &LayerInput<'_>,
        ctx: &mut AggContext<'_>,
    ) -> Result<Var> {
        check_params(params, 9)?;
        input.validate()?;
        let t = input.targets();
        let hid = tape.shape(params[1]).1;

        let orders: Vec<Vec<usize>> = (0..t)
            .map(|i| {
                let mut o = input.neighbors_of(i).to_vec();
                o.shuffle(ctx.rng);
                o
            })
            .collect();
        let steps = orders.iter().map(Vec::len).max().unwrap_or(0);

        let mut h = tape.constant(Tensor::zeros(t, hid));
        let mut c = tape.constant(Tensor::zeros(t, hid));
        for s in 0..steps {
            // Finished sequences read any row and keep their old state.
            let rows: Vec<usize> = orders.iter().map(|o| o[s.min(o.len() - 1)]).collect();
            let x = tape.gather(input.prev, &rows)?;
            let xh = tape.concat_cols(x, h)?;
            let gate = |tape: &mut Tape<F>, k: usize| -> Result<Var> {
                let lin = tape.matmul(xh, params[2 * k])?;
                tape.add_row(lin, params[2 * k + 1])
            };
            let i_pre = gate(tape, 0)?;
            let f_pre = gate(tape, 1)?;
            let o_pre = gate(tape, 2)?;
            let g_pre = gate(tape, 3)?;
            let ig = tape.sigmoid(i_pre)?;
            let fg = tape.sigmoid(f_pre)?;
            let og = tape.sigmoid(o_pre)?;
            let cand = tape.tanh(g_pre)?;
            let kept = tape.mul(fg, c)?;
            let fresh = tape.mul(ig, cand)?;
            let c_new = tape.add(kept, fresh)?;
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(og, tc)?;

            if orders.iter().all(|o| s < o.len()) {
                h = h_new;
                c = c_new;
            } else {
                let mut live = Tensor::zeros(t, hid);
                let mut done = Tensor::zeros(t, hid);
                for (i, o) in orders.iter().enumerate() {
                    let row = if s < o.len() { live.row_mut(i) } else { done.row_mut(i) };
                    row.fill(F::one());
                }
                let live = tape.constant(live);
                let done = tape.constant(done);
                h = blend(tape, live, h_new, done, h)?;
                c = blend(tape, live, c_new, done, c)?;
            }
        }
        let h = zero_fallback(tape, input, h)?;
        concat_dense(tape, input, h, params[8], ctx.activation)
    }

    fn symmetric(&self) -> bool {
        false
    }
}

fn blend<F: Real>(tape: &mut Tape<F>, m: Var, a: Var, not_m: Var, b: Var) -> Result<Var> {
    let x = tape.mul(m, a)?;
    let y = tape.mul(not_m, b)?;
    tape.add(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::testutil::{run, Star};
    use crate::aggregators::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> AggregatorDims {
        AggregatorDims {
            pool_dim: 4,
            lstm_dim: 3,
        }
    }

    fn random_params(seed: u64, in_dim: usize, out_dim: usize) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Aggregator::<f64>::init_layer(&LstmAggregator, in_dim, out_dim, &dims(), &mut rng)
            .into_iter()
            .map(|p| p.value)
            .collect()
    }

    #[test]
    fn zero_parameters_give_zero_neighbourhood() {
        let shapes = Aggregator::<f64>::layer_shapes(&LstmAggregator, 2, 5, &dims());
        let mut params: Vec<Tensor<f64>> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        // read the concatenated [self ; h] through an identity-like output map
        let mut w = Tensor::zeros(5, 5);
        for i in 0..5 {
            w.set(i, i, 1.0);
        }
        params[8] = w;
        let h = Tensor::from_f64(4, 2, &[0.3, 0.4, 1.0, -2.0, 5.0, 6.0, -7.0, 8.0]).unwrap();
        let out = run(&LstmAggregator, h, params, &Star::new(3), 9);
        assert_eq!(out.data(), &[0.3, 0.4, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn order_matters() {
        let params = random_params(3, 2, 4);
        let h = Tensor::from_f64(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 2.0]).unwrap();
        let outs: Vec<Tensor<f64>> = (0..12)
            .map(|s| run(&LstmAggregator, h.clone(), params.clone(), &Star::new(3), s))
            .collect();
        assert!(outs.iter().any(|o| o.max_abs_diff(&outs[0]) > 1e-9));
    }

    #[test]
    fn ragged_batch_matches_separate_runs() {
        let params = random_params(5, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h: Tensor<f64> = Tensor::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        // target 0 has 1 neighbour, target 1 has 4; a single neighbour has one order
        let self_rows = [0, 1];
        let offsets = [0, 1, 5];
        let neighbors = [2, 2, 3, 4, 5];
        let mut tape = Tape::new();
        let prev = tape.constant(h.clone());
        let ps: Vec<Var> = params.iter().cloned().map(|p| tape.param(p)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = AggContext {
            activation: Activation::Relu,
            rng: &mut r,
        };
        let input = LayerInput {
            prev,
            self_rows: &self_rows,
            offsets: &offsets,
            neighbors: &neighbors,
            fallback: None,
        };
        let out = LstmAggregator.forward(&mut tape, &ps, &input, &mut ctx).unwrap();
        let batched = tape.value(out).clone();

        let alone = Star {
            self_rows: vec![0],
            offsets: vec![0, 1],
            neighbors: vec![2],
        };
        let single = run(&LstmAggregator, h, params, &alone, 0);
        for c in 0..2 {
            assert!((batched.get(0, c) - single.get(0, c)).abs() < 1e-12);
        }
    }
}
