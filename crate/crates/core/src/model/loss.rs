use super::ParamVars;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Result, SageError};
use crate::graph::LabelSet;

/// Skip-gram style loss over positive pairs `(zu[i], zv[i])` with one shared
/// set of negatives: the mean over pairs of
/// `-log s(zu.zv) - sum_q log s(-zu.zn_q)`.
pub fn unsupervised_loss<F: Real>(tape: &mut Tape<F>, zu: Var, zv: Var, negatives: Var) -> Result<Var> {
    let pairs = tape.shape(zu).0;
    if pairs == 0 {
        return Err(SageError::Empty("positive pairs"));
    }
    let pos = tape.row_dot(zu, zv)?;
    let pos = tape.log_sigmoid(pos)?;
    let pos = tape.sum(pos)?;
    let neg = tape.matmul_t(zu, negatives)?;
    let neg = tape.scale(neg, -F::one())?;
    let neg = tape.log_sigmoid(neg)?;
    let neg = tape.sum(neg)?;
    let total = tape.add(pos, neg)?;
    tape.scale(total, -F::one() / F::of(pairs as f64))
}

/// Value of [`unsupervised_loss`] without keeping a tape.
pub fn unsupervised_loss_value<F: Real>(zu: &Tensor<F>, zv: &Tensor<F>, negatives: &Tensor<F>) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(zu.clone());
    let b = tape.constant(zv.clone());
    let n = tape.constant(negatives.clone());
    let l = unsupervised_loss(&mut tape, a, b, n)?;
    Ok(tape.value(l).item().as_f64())
}

/// Dense classification layer on embeddings.
pub fn head_logits<F: Real>(tape: &mut Tape<F>, vars: &ParamVars, z: Var) -> Result<Var> {
    match vars.head.as_slice() {
        [w, b] => {
            let lin = tape.matmul(z, *w)?;
            tape.add_row(lin, *b)
        }
        _ => Err(SageError::InvalidConfig("model has no classification head".into())),
    }
}

/// Softmax cross-entropy for single-label targets, per-label sigmoid
/// cross-entropy for multi-label ones. `labels` is aligned with the rows of
/// `logits`.
pub fn supervised_loss<F: Real>(tape: &mut Tape<F>, logits: Var, labels: &LabelSet) -> Result<Var> {
    match labels {
        LabelSet::Single { labels, .. } => tape.softmax_xent(logits, labels),
        LabelSet::Multi { width, .. } => {
            let ind: Vec<F> = labels.indicator().into_iter().map(F::of).collect();
            let targets = Tensor::from_vec(labels.len(), *width, ind)?;
            tape.sigmoid_xent(logits, &targets)
        }
    }
}

/// Argmax per row, or each logit above zero (probability above 0.5).
pub fn predict<F: Real>(logits: &Tensor<F>, like: &LabelSet) -> Result<LabelSet> {
    match like {
        LabelSet::Single { classes, .. } => {
            let labels = (0..logits.rows())
                .map(|r| {
                    let row = logits.row(r);
                    let mut best = 0;
                    for (c, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            LabelSet::single(*classes, labels)
        }
        LabelSet::Multi { width, .. } => LabelSet::multi(
            *width,
            (0..logits.rows())
                .map(|r| logits.row(r).iter().map(|&x| x > F::zero()).collect())
                .collect(),
        ),
    }
}
