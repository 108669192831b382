use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sage_core::autodiff::{Tape, Tensor, Var};

struct Counting;

static COUNTING: AtomicBool = AtomicBool::new(false);
static ALLOCS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if COUNTING.load(Ordering::Relaxed) {
            ALLOCS.fetch_add(1, Ordering::Relaxed);
        }
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if COUNTING.load(Ordering::Relaxed) {
            ALLOCS.fetch_add(1, Ordering::Relaxed);
        }
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn t(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A graph touching every primitive the models use.
fn build(tape: &mut Tape<f64>) -> Var {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let x = tape.param(t(&mut r, 6, 4));
    let w = tape.param(t(&mut r, 4, 3));
    let b = tape.param(t(&mut r, 1, 3));
    let c = tape.constant(t(&mut r, 6, 3));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add_row(h, b).unwrap();
    let a = tape.relu(h).unwrap();
    let s = tape.sigmoid(h).unwrap();
    let th = tape.tanh(h).unwrap();
    let m = tape.mul(s, th).unwrap();
    let m = tape.add(m, a).unwrap();
    let m = tape.sub(m, c).unwrap();
    let m = tape.scale(m, 0.5).unwrap();
    let g = tape.gather(m, &[0, 2, 2, 5, 1, 3]).unwrap();
    let sm = tape.segment_mean(g, &[0, 2, 6]).unwrap();
    let sx = tape.segment_max(g, &[0, 3, 6]).unwrap();
    let cat = tape.concat_cols(sm, sx).unwrap();
    let both = tape.concat_rows(&[cat, cat]).unwrap();
    let mx = tape.max_reduce(&[sm, sx]).unwrap();
    let mn = tape.mean_reduce(&[sm, sx]).unwrap();
    let n = tape.normalize_rows(both).unwrap();
    let d = tape.row_dot(mx, mn).unwrap();
    let ls = tape.log_sigmoid(d).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let one = tape.constant(Tensor::from_f64(2, 1, &[1.0, 1.0]).unwrap());
    let pos = tape.add(sq, one).unwrap();
    let lg = tape.log(pos).unwrap();
    let mt = tape.matmul_t(n, n).unwrap();
    let xe = tape.softmax_xent(mt, &[0, 1, 2, 3]).unwrap();
    let bx = tape.sigmoid_xent(cat, &Tensor::from_f64(2, 6, &[1., 0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 1.]).unwrap()).unwrap();
    let parts = [tape.sum(ls).unwrap(), tape.mean(lg).unwrap(), xe, bx];
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p).unwrap();
    }
    total
}

#[test]
fn backward_allocates_only_gradient_buffers() {
    let mut tape = Tape::new();
    let out = build(&mut tape);
    let buffers = tape.grad_nodes();
    ALLOCS.store(0, Ordering::SeqCst);
    COUNTING.store(true, Ordering::SeqCst);
    let grads = tape.backward(out);
    COUNTING.store(false, Ordering::SeqCst);
    let used = ALLOCS.load(Ordering::SeqCst);
    drop(grads);
    // one buffer per gradient-carrying node, plus the gradient table
    assert!(used <= buffers + 1, "{used} allocations for {buffers} gradient buffers");
}
