use super::tensor::{Real, Tensor};
use crate::error::{Result, SageError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive selector for [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    Add,
    ConcatCols,
    Relu,
    Sigmoid,
    Tanh,
    MaxReduce,
    MeanReduce,
    NormalizeRows,
    Dot,
    Log,
    Mul,
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    LogSigmoid(Var),
    MaxSet(Vec<Var>, Vec<u32>),
    MeanSet(Vec<Var>),
    SegmentMean(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    NormalizeRows(Var, Vec<F>),
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    SoftmaxXent(Var, Vec<usize>, Tensor<F>),
    SigmoidXent(Var, Tensor<F>),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Gather(..) => "gather",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Log(..) => "log",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::MaxSet(..) => "max_reduce",
            Op::MeanSet(..) => "mean_reduce",
            Op::SegmentMean(..) => "segment_mean",
            Op::SegmentMax(..) => "segment_max",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::RowDot(..) => "row_dot",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::SoftmaxXent(..) => "softmax_xent",
            Op::SigmoidXent(..) => "sigmoid_xent",
        }
    }
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    needs_grad: bool,
}

/// Records primitive applications in execution order so that
/// [`Tape::backward`] can replay them in reverse.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SageError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// ln(1 + e^{-|x|}), the shared tail of the stable log-sigmoid forms.
fn log1p_exp_neg_abs<F: Real>(x: F) -> F {
    (-x.abs()).exp().ln_1p()
}

fn log_sigmoid<F: Real>(x: F) -> F {
    x.min(F::zero()) - log1p_exp_neg_abs(x)
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(SageError::ShapeMismatch {
            op,
            left: (offsets.len().saturating_sub(1), 0),
            right: (rows, 0),
        })
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Number of recorded nodes that will receive a gradient buffer.
    pub fn grad_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.needs_grad).count()
    }

    /// Records a constant.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; [`Tape::backward`] returns its gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, needs_grad: bool) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(SageError::NonFinite {
                op: op.name(),
                node,
            });
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(node))
    }

    /// Generic dispatcher over the basic primitive set.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(SageError::InvalidConfig(format!(
                    "{prim:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match prim {
            Primitive::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            Primitive::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            Primitive::ConcatCols => arity(2).and_then(|_| self.concat_cols(inputs[0], inputs[1])),
            Primitive::Relu => arity(1).and_then(|_| self.relu(inputs[0])),
            Primitive::Sigmoid => arity(1).and_then(|_| self.sigmoid(inputs[0])),
            Primitive::Tanh => arity(1).and_then(|_| self.tanh(inputs[0])),
            Primitive::MaxReduce => self.max_reduce(inputs),
            Primitive::MeanReduce => self.mean_reduce(inputs),
            Primitive::NormalizeRows => arity(1).and_then(|_| self.normalize_rows(inputs[0])),
            Primitive::Dot => arity(2).and_then(|_| self.row_dot(inputs[0], inputs[1])),
            Primitive::Log => arity(1).and_then(|_| self.log(inputs[0])),
            Primitive::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), out, ng)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(SageError::ShapeMismatch {
                op: "matmul_t",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        for i in 0..ta.rows() {
            let ar = ta.row(i);
            for j in 0..tb.rows() {
                let s: F = ar.iter().zip(tb.row(j)).map(|(&x, &y)| x * y).sum();
                out.set(i, j, s);
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(Op::MatMulT(a, b), out, ng)
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        self.push(Op::Sub(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), out, ng)
    }

    /// Adds the 1 x cols row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(SageError::ShapeMismatch {
                op: "add_row",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let ng = self.needs(&[a, bias]);
        self.push(Op::AddRow(a, bias), out, ng)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let ng = self.needs(&[a]);
        self.push(Op::Scale(a, c), out, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(SageError::ShapeMismatch {
                op: "concat_cols",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let cols = ta.cols() + tb.cols();
        let mut data = Vec::with_capacity(ta.rows() * cols);
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::from_vec(ta.rows(), cols, data)?;
        let ng = self.needs(&[a, b]);
        self.push(Op::ConcatCols(a, b), out, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(SageError::Empty("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(SageError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(*first).shape(),
                    right: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = self.needs(parts);
        self.push(Op::ConcatRows(parts.to_vec()), out, ng)
    }

    /// Row selection with repetition allowed.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= ta.rows()) {
            return Err(SageError::ShapeMismatch {
                op: "gather",
                left: ta.shape(),
                right: (bad, 0),
            });
        }
        let out = ta.select_rows(rows);
        let ng = self.needs(&[a]);
        self.push(Op::Gather(a, rows.to_vec()), out, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let out = self.value(a).map(f);
        let ng = self.needs(&[a]);
        self.push(op, out, ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(F::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Elementwise max over equally shaped tensors. Ties resolve to the
    /// first argument.
    pub fn max_reduce(&mut self, set: &[Var]) -> Result<Var> {
        let first = *set.first().ok_or(SageError::Empty("max_reduce"))?;
        let mut out = self.value(first).clone();
        let mut arg = vec![0u32; out.len()];
        for (s, &v) in set.iter().enumerate().skip(1) {
            let t = self.value(v);
            same_shape("max_reduce", &out, t)?;
            for ((o, a), &x) in out.data_mut().iter_mut().zip(arg.iter_mut()).zip(t.data()) {
                if x > *o {
                    *o = x;
                    *a = s as u32;
                }
            }
        }
        let ng = self.needs(set);
        self.push(Op::MaxSet(set.to_vec(), arg), out, ng)
    }

    /// Elementwise mean over equally shaped tensors. Each element is summed
    /// in sorted order so the result does not depend on the order of `set`.
    pub fn mean_reduce(&mut self, set: &[Var]) -> Result<Var> {
        let first = *set.first().ok_or(SageError::Empty("mean_reduce"))?;
        let shape = self.shape(first);
        for &v in set {
            same_shape("mean_reduce", self.value(first), self.value(v))?;
        }
        let n = F::from_usize(set.len()).unwrap();
        let mut buf = Vec::with_capacity(set.len());
        let mut out = Tensor::zeros(shape.0, shape.1);
        for i in 0..out.len() {
            buf.clear();
            buf.extend(set.iter().map(|&v| self.value(v).data()[i]));
            out.data_mut()[i] = sorted_sum(&mut buf) / n;
        }
        let ng = self.needs(set);
        self.push(Op::MeanSet(set.to_vec()), out, ng)
    }

    /// Mean over contiguous row segments: output row `i` averages input rows
    /// `offsets[i]..offsets[i + 1]`. Order-independent like [`Self::mean_reduce`].
    pub fn segment_mean(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        check_offsets("segment_mean", offsets, ta.rows())?;
        let segs = offsets.len() - 1;
        let cols = ta.cols();
        let mut out = Tensor::zeros(segs, cols);
        let mut buf = Vec::new();
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let n = F::from_usize(hi - lo).unwrap();
            for c in 0..cols {
                buf.clear();
                buf.extend((lo..hi).map(|r| ta.get(r, c)));
                out.set(s, c, sorted_sum(&mut buf) / n);
            }
        }
        let ng = self.needs(&[a]);
        self.push(Op::SegmentMean(a, offsets.to_vec()), out, ng)
    }

    /// Elementwise max over contiguous row segments.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        check_offsets("segment_max", offsets, ta.rows())?;
        let segs = offsets.len() - 1;
        let cols = ta.cols();
        let mut out = Tensor::zeros(segs, cols);
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let dst = out.row_mut(s);
            dst.copy_from_slice(ta.row(lo));
            for r in lo + 1..hi {
                for (o, &x) in dst.iter_mut().zip(ta.row(r)) {
                    if x > *o {
                        *o = x;
                    }
                }
            }
        }
        let ng = self.needs(&[a]);
        self.push(Op::SegmentMax(a, offsets.to_vec()), out, ng)
    }

    /// Row-wise L2 normalisation. All-zero rows pass through unchanged and
    /// receive no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut out = ta.clone();
        let mut norms = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let n = ta.row(r).iter().map(|&x| x * x).sum::<F>().sqrt();
            norms.push(n);
            if n > F::zero() {
                for x in out.row_mut(r) {
                    *x /= n;
                }
            }
        }
        let ng = self.needs(&[a]);
        self.push(Op::NormalizeRows(a, norms), out, ng)
    }

    /// Row-wise dot product, producing a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("row_dot", ta, tb)?;
        let data = (0..ta.rows())
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let out = Tensor::from_vec(ta.rows(), 1, data)?;
        let ng = self.needs(&[a, b]);
        self.push(Op::RowDot(a, b), out, ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(SageError::Empty("mean"));
        }
        let s: F = t.data().iter().copied().sum();
        let m = s / F::from_usize(t.len()).unwrap();
        let ng = self.needs(&[a]);
        self.push(Op::MeanAll(a), Tensor::scalar(m), ng)
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != labels.len() {
            return Err(SageError::LengthMismatch {
                what: "softmax_xent labels",
                expected: t.rows(),
                got: labels.len(),
            });
        }
        if t.rows() == 0 {
            return Err(SageError::Empty("softmax_xent"));
        }
        let mut probs = Tensor::zeros(t.rows(), t.cols());
        let mut total = F::zero();
        for (r, &y) in labels.iter().enumerate() {
            if y >= t.cols() {
                return Err(SageError::LabelOutOfRange {
                    label: y,
                    classes: t.cols(),
                });
            }
            let row = t.row(r);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - m).exp()).sum();
            let lz = z.ln();
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - m).exp() / z;
            }
            total += lz - (row[y] - m);
        }
        let n = F::from_usize(labels.len()).unwrap();
        let ng = self.needs(&[logits]);
        self.push(
            Op::SoftmaxXent(logits, labels.to_vec(), probs),
            Tensor::scalar(total / n),
            ng,
        )
    }

    /// Mean elementwise sigmoid cross-entropy against 0/1 targets.
    pub fn sigmoid_xent(&mut self, logits: Var, targets: &Tensor<F>) -> Result<Var> {
        let t = self.value(logits);
        same_shape("sigmoid_xent", t, targets)?;
        if t.is_empty() {
            return Err(SageError::Empty("sigmoid_xent"));
        }
        let total: F = t
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(F::zero()) - x * y + log1p_exp_neg_abs(x))
            .sum();
        let n = F::from_usize(t.len()).unwrap();
        let ng = self.needs(&[logits]);
        self.push(
            Op::SigmoidXent(logits, targets.clone()),
            Tensor::scalar(total / n),
            ng,
        )
    }

    /// Reverse pass from a 1x1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        let out_shape = self.shape(output);
        if out_shape != (1, 1) {
            return Err(SageError::NotScalar(out_shape));
        }
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        if !self.nodes[output.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::scalar(F::one()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.adjoint(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn adjoint(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        // Lazily allocated accumulator for an input, or None if the input
        // does not need a gradient.
        let acc = |v: Var, grads: &mut [Option<Tensor<F>>]| -> bool {
            if !self.nodes[v.0].needs_grad {
                return false;
            }
            if grads[v.0].is_none() {
                let (r, c) = self.nodes[v.0].value.shape();
                grads[v.0] = Some(Tensor::zeros(r, c));
            }
            true
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    // dA = dC * B^T
                    for r in 0..ta.rows() {
                        let gr = g.row(r);
                        for k in 0..ta.cols() {
                            let s: F = gr.iter().zip(tb.row(k)).map(|(&x, &y)| x * y).sum();
                            ga.data_mut()[r * ta.cols() + k] += s;
                        }
                    }
                }
                if acc(*b, grads) {
                    let gb = grads[b.0].as_mut().unwrap();
                    // dB = A^T * dC
                    let n = tb.cols();
                    for r in 0..ta.rows() {
                        let gr = g.row(r);
                        for (k, &aik) in ta.row(r).iter().enumerate() {
                            if aik == F::zero() {
                                continue;
                            }
                            let dst = &mut gb.data_mut()[k * n..(k + 1) * n];
                            for (d, &x) in dst.iter_mut().zip(gr) {
                                *d += aik * x;
                            }
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for r in 0..ta.rows() {
                        for j in 0..tb.rows() {
                            let gij = g.get(r, j);
                            for (d, &y) in ga.row_mut(r).iter_mut().zip(tb.row(j)) {
                                *d += gij * y;
                            }
                        }
                    }
                }
                if acc(*b, grads) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for r in 0..ta.rows() {
                        for j in 0..tb.rows() {
                            let gij = g.get(r, j);
                            for (d, &x) in gb.row_mut(j).iter_mut().zip(ta.row(r)) {
                                *d += gij * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -F::one()
                } else {
                    F::one()
                };
                if acc(*a, grads) {
                    add_into(grads[a.0].as_mut().unwrap().data_mut(), g.data(), F::one());
                }
                if acc(*b, grads) {
                    add_into(grads[b.0].as_mut().unwrap().data_mut(), g.data(), sign);
                }
            }
            Op::AddRow(a, bias) => {
                if acc(*a, grads) {
                    add_into(grads[a.0].as_mut().unwrap().data_mut(), g.data(), F::one());
                }
                if acc(*bias, grads) {
                    let gb = grads[bias.0].as_mut().unwrap();
                    for r in 0..g.rows() {
                        for (d, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &x), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(val(*b).data()) {
                        *d += x * y;
                    }
                }
                if acc(*b, grads) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for ((d, &x), &y) in gb.data_mut().iter_mut().zip(g.data()).zip(val(*a).data()) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if acc(*a, grads) {
                    add_into(grads[a.0].as_mut().unwrap().data_mut(), g.data(), *c);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for r in 0..g.rows() {
                        add_into(ga.row_mut(r), &g.row(r)[..ca], F::one());
                    }
                }
                if acc(*b, grads) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for r in 0..g.rows() {
                        add_into(gb.row_mut(r), &g.row(r)[ca..ca + cb], F::one());
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if acc(p, grads) {
                        add_into(
                            grads[p.0].as_mut().unwrap().data_mut(),
                            &g.data()[offset..offset + len],
                            F::one(),
                        );
                    }
                    offset += len;
                }
            }
            Op::Gather(a, rows) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(ga.row_mut(r), g.row(i), F::one());
                    }
                }
            }
            Op::Relu(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &x), &gx) in ga.data_mut().iter_mut().zip(val(*a).data()).zip(g.data()) {
                        if x > F::zero() {
                            *d += gx;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &y), &gx) in ga.data_mut().iter_mut().zip(node.value.data()).zip(g.data()) {
                        *d += gx * y * (F::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &y), &gx) in ga.data_mut().iter_mut().zip(node.value.data()).zip(g.data()) {
                        *d += gx * (F::one() - y * y);
                    }
                }
            }
            Op::Log(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &x), &gx) in ga.data_mut().iter_mut().zip(val(*a).data()).zip(g.data()) {
                        *d += gx / x;
                    }
                }
            }
            Op::LogSigmoid(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for ((d, &x), &gx) in ga.data_mut().iter_mut().zip(val(*a).data()).zip(g.data()) {
                        *d += gx * sigmoid(-x);
                    }
                }
            }
            Op::MaxSet(set, arg) => {
                for (s, &v) in set.iter().enumerate() {
                    if acc(v, grads) {
                        let gv = grads[v.0].as_mut().unwrap();
                        for ((d, &a), &gx) in gv.data_mut().iter_mut().zip(arg).zip(g.data()) {
                            if a as usize == s {
                                *d += gx;
                            }
                        }
                    }
                }
            }
            Op::MeanSet(set) => {
                let inv = F::one() / F::from_usize(set.len()).unwrap();
                for &v in set {
                    if acc(v, grads) {
                        add_into(grads[v.0].as_mut().unwrap().data_mut(), g.data(), inv);
                    }
                }
            }
            Op::SegmentMean(a, offsets) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        let inv = F::one() / F::from_usize(hi - lo).unwrap();
                        for r in lo..hi {
                            add_into(ga.row_mut(r), g.row(s), inv);
                        }
                    }
                }
            }
            Op::SegmentMax(a, offsets) => {
                if acc(*a, grads) {
                    let ta = val(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    let cols = ta.cols();
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        for c in 0..cols {
                            let target = node.value.get(s, c);
                            // first row attaining the max
                            let r = (lo..hi).find(|&r| ta.get(r, c) == target).unwrap_or(lo);
                            ga.data_mut()[r * cols + c] += g.get(s, c);
                        }
                    }
                }
            }
            Op::NormalizeRows(a, norms) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (r, &n) in norms.iter().enumerate() {
                        if n <= F::zero() {
                            continue;
                        }
                        let y = node.value.row(r);
                        let gr = g.row(r);
                        let yg: F = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                            *d += (gi - yi * yg) / n;
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                for (x, other) in [(*a, *b), (*b, *a)] {
                    if acc(x, grads) {
                        let to = val(other);
                        let gx = grads[x.0].as_mut().unwrap();
                        for r in 0..to.rows() {
                            add_into(gx.row_mut(r), to.row(r), g.get(r, 0));
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if acc(*a, grads) {
                    let s = g.item();
                    for d in grads[a.0].as_mut().unwrap().data_mut() {
                        *d += s;
                    }
                }
            }
            Op::MeanAll(a) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    let s = g.item() / F::from_usize(ga.len()).unwrap();
                    for d in ga.data_mut() {
                        *d += s;
                    }
                }
            }
            Op::SoftmaxXent(a, labels, probs) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    let s = g.item() / F::from_usize(labels.len()).unwrap();
                    for (r, &y) in labels.iter().enumerate() {
                        let dst = ga.row_mut(r);
                        for (c, (d, &p)) in dst.iter_mut().zip(probs.row(r)).enumerate() {
                            let t = if c == y { F::one() } else { F::zero() };
                            *d += s * (p - t);
                        }
                    }
                }
            }
            Op::SigmoidXent(a, targets) => {
                if acc(*a, grads) {
                    let ga = grads[a.0].as_mut().unwrap();
                    let s = g.item() / F::from_usize(ga.len()).unwrap();
                    for ((d, &x), &y) in ga.data_mut().iter_mut().zip(val(*a).data()).zip(targets.data()) {
                        *d += s * (sigmoid(x) - y);
                    }
                }
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F], scale: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn sorted_sum<F: Real>(buf: &mut [F]) -> F {
    buf.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    buf.iter().fold(F::zero(), |acc, &x| acc + x)
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed back.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Tensor<F> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}
