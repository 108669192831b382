use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sage_core::autodiff::{grad_check, Tape, Tensor, Var};
use sage_core::Result;

// Smooth primitives are exact to truncation error h^2, and kinks stay at
// least 0.1 away, so a larger step keeps rounding noise well below 1e-6.
const STEP: f64 = 1e-4;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dense(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let d = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
    Tensor::from_vec(rows, cols, d).unwrap()
}

fn off_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let d = (0..rows * cols)
        .map(|_| {
            let m: f64 = r.random_range(0.1..2.0);
            if r.random() { m } else { -m }
        })
        .collect();
    Tensor::from_vec(rows, cols, d).unwrap()
}

fn positive(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let d = (0..rows * cols).map(|_| r.random_range(0.5..3.0)).collect();
    Tensor::from_vec(rows, cols, d).unwrap()
}

/// `count` tensors whose values at every coordinate are pairwise at least
/// 0.25 apart, so no perturbation changes an argmax.
fn distinct(r: &mut ChaCha8Rng, count: usize, rows: usize, cols: usize) -> Vec<Tensor<f64>> {
    let mut out = vec![Tensor::zeros(rows, cols); count];
    let grid: Vec<f64> = (0..16).map(|j| -2.0 + 0.25 * j as f64).collect();
    for i in 0..rows * cols {
        let picks: Vec<f64> = grid.choose_multiple(r, count).copied().collect();
        for (t, v) in out.iter_mut().zip(picks) {
            t.data_mut()[i] = v;
        }
    }
    out
}

fn shape(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(1..5), r.random_range(1..5))
}

/// Reduces any output to a scalar through fixed random weights.
fn weighted(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let w = tape.constant(dense(&mut rng(seed ^ 0xabcd), r, c));
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn check<Func>(params: &[Tensor<f64>], f: Func) -> std::result::Result<(), TestCaseError>
where
    Func: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let r = grad_check(f, params, STEP).unwrap();
    prop_assert!(r.max_rel_error < TOL, "{r:?}");
    Ok(())
}

macro_rules! unary {
    ($name:ident, $gen:ident, $op:ident) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn $name(seed in any::<u64>()) {
                let mut r = rng(seed);
                let (a, b) = shape(&mut r);
                let x = $gen(&mut r, a, b);
                check(&[x], |t, p| {
                    let y = t.$op(p[0])?;
                    weighted(t, y, seed)
                })?;
            }
        }
    };
}

macro_rules! binary_same {
    ($name:ident, $op:ident) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn $name(seed in any::<u64>()) {
                let mut r = rng(seed);
                let (a, b) = shape(&mut r);
                let x = dense(&mut r, a, b);
                let y = dense(&mut r, a, b);
                check(&[x, y], |t, p| {
                    let z = t.$op(p[0], p[1])?;
                    weighted(t, z, seed)
                })?;
            }
        }
    };
}

unary!(relu_matches_differences, off_zero, relu);
unary!(sigmoid_matches_differences, dense, sigmoid);
unary!(tanh_matches_differences, dense, tanh);
unary!(log_matches_differences, positive, log);
unary!(log_sigmoid_matches_differences, dense, log_sigmoid);
unary!(normalize_rows_matches_differences, off_zero, normalize_rows);
unary!(sum_matches_differences, dense, sum);
unary!(mean_matches_differences, dense, mean);
binary_same!(add_matches_differences, add);
binary_same!(sub_matches_differences, sub);
binary_same!(mul_matches_differences, mul);
binary_same!(row_dot_matches_differences, row_dot);
binary_same!(concat_cols_matches_differences, concat_cols);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let c = r.random_range(1..5);
        let x = dense(&mut r, a, b);
        let y = dense(&mut r, b, c);
        check(&[x, y], |t, p| { let z = t.matmul(p[0], p[1])?; weighted(t, z, seed) })?;
    }

    #[test]
    fn matmul_t_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let c = r.random_range(1..5);
        let x = dense(&mut r, a, b);
        let y = dense(&mut r, c, b);
        check(&[x, y], |t, p| { let z = t.matmul_t(p[0], p[1])?; weighted(t, z, seed) })?;
    }

    #[test]
    fn add_row_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let x = dense(&mut r, a, b);
        let bias = dense(&mut r, 1, b);
        check(&[x, bias], |t, p| { let z = t.add_row(p[0], p[1])?; weighted(t, z, seed) })?;
    }

    #[test]
    fn scale_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let x = dense(&mut r, a, b);
        let c: f64 = r.random_range(-3.0..3.0);
        check(&[x], |t, p| { let z = t.scale(p[0], c)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn concat_rows_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cols = r.random_range(1..5);
        let parts: Vec<Tensor<f64>> = (0..3).map(|_| { let n = r.random_range(1..4); dense(&mut r, n, cols) }).collect();
        check(&parts, |t, p| { let z = t.concat_rows(p)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn gather_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let x = dense(&mut r, a, b);
        let rows: Vec<usize> = (0..r.random_range(1..8)).map(|_| r.random_range(0..a)).collect();
        check(&[x], |t, p| { let z = t.gather(p[0], &rows)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn max_reduce_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let n = r.random_range(1..5);
        let set = distinct(&mut r, n, a, b);
        check(&set, |t, p| { let z = t.max_reduce(p)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn mean_reduce_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let set: Vec<Tensor<f64>> = (0..r.random_range(1..5)).map(|_| dense(&mut r, a, b)).collect();
        check(&set, |t, p| { let z = t.mean_reduce(p)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn segment_mean_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cols = r.random_range(1..5);
        let mut offsets = vec![0];
        for _ in 0..r.random_range(1..4) {
            let next = offsets.last().unwrap() + r.random_range(1..4);
            offsets.push(next);
        }
        let x = dense(&mut r, *offsets.last().unwrap(), cols);
        check(&[x], |t, p| { let z = t.segment_mean(p[0], &offsets)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn segment_max_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cols = r.random_range(1..5);
        let sizes: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..4)).collect();
        let mut offsets = vec![0];
        let mut rows = Vec::new();
        for &s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
            let seg = distinct(&mut r, s, 1, cols);
            rows.extend(seg);
        }
        let mut x = Tensor::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            x.row_mut(i).copy_from_slice(row.data());
        }
        check(&[x], |t, p| { let z = t.segment_max(p[0], &offsets)?; weighted(t, z, seed) })?;
    }

    #[test]
    fn softmax_xent_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (r.random_range(1..5), r.random_range(2..5));
        let x = dense(&mut r, a, b);
        let labels: Vec<usize> = (0..a).map(|_| r.random_range(0..b)).collect();
        check(&[x], |t, p| t.softmax_xent(p[0], &labels))?;
    }

    #[test]
    fn sigmoid_xent_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = shape(&mut r);
        let x = dense(&mut r, a, b);
        let y = Tensor::from_vec(a, b, (0..a * b).map(|_| if r.random() { 1.0 } else { 0.0 }).collect()).unwrap();
        check(&[x], |t, p| t.sigmoid_xent(p[0], &y))?;
    }
}

fn composite(tape: &mut Tape<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> (Var, Var, Var) {
    let a = tape.param(x.clone());
    let b = tape.param(w.clone());
    let h = tape.matmul(a, b).unwrap();
    let h = tape.tanh(h).unwrap();
    let h = tape.normalize_rows(h).unwrap();
    let h = tape.segment_max(h, &[0, 2, 4]).unwrap();
    (a, b, tape.sum(h).unwrap())
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let mut r = rng(5);
    let x = dense(&mut r, 4, 3);
    let w = dense(&mut r, 3, 5);
    let run = || {
        let mut tape = Tape::new();
        let (a, b, out) = composite(&mut tape, &x, &w);
        let g = tape.backward(out).unwrap();
        let grads: Vec<Vec<f64>> = [a, b].iter().map(|&v| g.get(v).unwrap().to_f64_vec()).collect();
        (tape.value(out).item().to_bits(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn gather_with_repeats_accumulates() {
    let mut order: Vec<usize> = vec![0, 0, 1, 0];
    order.shuffle(&mut rng(1));
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.param(Tensor::from_f64(2, 1, &[1.0, 2.0]).unwrap());
    let g = tape.gather(x, &order).unwrap();
    let s = tape.sum(g).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().to_f64_vec(), vec![3.0, 1.0]);
}
