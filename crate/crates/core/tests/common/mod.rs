use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sage_core::aggregators::{create, Activation, AggContext, AggregatorDims, LayerInput};
use sage_core::autodiff::{Tape, Tensor};

/// Layer output for random rows of `prev` and random neighbour lists,
/// before and after shuffling every list.
pub fn layer_twice(agg: &str, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, out) = (r.random_range(2..10), r.random_range(1..6), r.random_range(1..6));
    let a = create::<f64>(agg).unwrap();
    let params = a.init_layer(d, out, &AggregatorDims { pool_dim: 4, lstm_dim: 3 }, &mut r);
    let prev = Tensor::from_vec(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let targets = r.random_range(1..5);
    let lists: Vec<Vec<usize>> = (0..targets)
        .map(|_| (0..r.random_range(1..7)).map(|_| r.random_range(0..n)).collect())
        .collect();
    let self_rows: Vec<usize> = (0..targets).map(|_| r.random_range(0..n)).collect();
    let mut shuffled = lists.clone();
    for l in &mut shuffled {
        l.shuffle(&mut r);
    }
    let run = |lists: &[Vec<usize>]| {
        let mut tape = Tape::new();
        let p = tape.constant(prev.clone());
        let vars: Vec<_> = params.iter().map(|t| tape.param(t.value.clone())).collect();
        let mut offsets = vec![0];
        let mut nb = Vec::new();
        for l in lists {
            nb.extend(l);
            offsets.push(nb.len());
        }
        let input = LayerInput { prev: p, self_rows: &self_rows, offsets: &offsets, neighbors: &nb, fallback: None };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = AggContext { activation: Activation::Relu, rng: &mut rng };
        let h = a.forward(&mut tape, &vars, &input, &mut ctx).unwrap();
        tape.value(h).data().iter().map(|x| x.to_bits()).collect::<Vec<u64>>()
    };
    (run(&lists), run(&shuffled))
}
