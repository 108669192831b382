//! Downstream linear classifier on frozen embeddings and F1 metrics.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Result, SageError};
use crate::graph::{LabelKind, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lr: 0.1,
            epochs: 50,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// One-vs-rest logistic regression on standardised inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    kind: LabelKind,
    width: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Per output: weights then bias.
    weights: Vec<Vec<f64>>,
    constant: Option<usize>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fits on fixed inputs; nothing flows back into `x`.
pub fn fit_downstream_classifier<F: Real>(
    x: &Tensor<F>,
    labels: &LabelSet,
    cfg: &LogisticConfig,
) -> Result<LinearClassifier> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(SageError::Empty("classifier training set"));
    }
    if labels.len() != n {
        return Err(SageError::LengthMismatch {
            what: "classifier labels",
            expected: n,
            got: labels.len(),
        });
    }
    let xs = x.to_f64_vec();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += xs[r * d + c] / n as f64;
        }
    }
    for r in 0..n {
        for c in 0..d {
            scale[c] += (xs[r * d + c] - mean[c]).powi(2) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 1.0 };
    }
    let width = labels.width();
    let mut clf = LinearClassifier {
        kind: labels.kind(),
        width,
        mean,
        scale,
        weights: vec![vec![0.0; d + 1]; width],
        constant: None,
    };
    if let Some(cls) = labels.classes() {
        let first = cls[0];
        if cls.iter().all(|&c| c == first) {
            warn!("training labels contain a single class; predicting class {first} everywhere");
            clf.constant = Some(first);
            return Ok(clf);
        }
    }
    let y = labels.indicator();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut feat = vec![0.0; d];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr / (1.0 + epoch as f64).sqrt();
        for &r in &order {
            clf.standardise(&xs[r * d..(r + 1) * d], &mut feat);
            for (k, w) in clf.weights.iter_mut().enumerate() {
                let s = w[d] + w[..d].iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(s) - y[r * width + k];
                for (wi, fi) in w[..d].iter_mut().zip(&feat) {
                    *wi -= lr * (err * fi + cfg.l2 * *wi);
                }
                w[d] -= lr * err;
            }
        }
    }
    Ok(clf)
}

impl LinearClassifier {
    fn standardise(&self, row: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = (row[c] - self.mean[c]) * self.scale[c];
        }
    }

    /// Raw one-vs-rest scores, `rows x width`.
    pub fn scores<F: Real>(&self, x: &Tensor<F>) -> Result<Vec<Vec<f64>>> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(SageError::ShapeMismatch {
                op: "classifier input",
                left: x.shape(),
                right: (x.rows(), d),
            });
        }
        let xs = x.to_f64_vec();
        let mut feat = vec![0.0; d];
        Ok((0..x.rows())
            .map(|r| {
                self.standardise(&xs[r * d..(r + 1) * d], &mut feat);
                self.weights
                    .iter()
                    .map(|w| w[d] + w[..d].iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect())
    }

    pub fn predict<F: Real>(&self, x: &Tensor<F>) -> Result<LabelSet> {
        let scores = self.scores(x)?;
        match self.kind {
            LabelKind::Single => {
                let labels = scores
                    .iter()
                    .map(|s| {
                        self.constant.unwrap_or_else(|| {
                            let mut best = 0;
                            for (k, &v) in s.iter().enumerate() {
                                if v > s[best] {
                                    best = k;
                                }
                            }
                            best
                        })
                    })
                    .collect();
                LabelSet::single(self.width, labels)
            }
            LabelKind::Multi => LabelSet::multi(
                self.width,
                scores.iter().map(|s| s.iter().map(|&v| v > 0.0).collect()).collect(),
            ),
        }
    }
}

/// Per-class true positive, false positive and false negative counts.
pub fn confusion_counts(pred: &LabelSet, truth: &LabelSet) -> Result<Vec<(usize, usize, usize)>> {
    if pred.len() != truth.len() || pred.kind() != truth.kind() || pred.width() != truth.width() {
        return Err(SageError::Format("predictions and truth are not aligned".into()));
    }
    if truth.is_empty() {
        return Err(SageError::Empty("F1 input"));
    }
    Ok((0..truth.width())
        .map(|c| {
            let mut t = (0, 0, 0);
            for i in 0..truth.len() {
                match (pred.has(i, c), truth.has(i, c)) {
                    (true, true) => t.0 += 1,
                    (true, false) => t.1 += 1,
                    (false, true) => t.2 += 1,
                    (false, false) => {}
                }
            }
            t
        })
        .collect())
}

/// `2TP / (2TP + FP + FN)`, taken as 0 when all counts are 0.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn micro_f1(pred: &LabelSet, truth: &LabelSet) -> Result<f64> {
    let (tp, fp, fn_) = confusion_counts(pred, truth)?
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroF1 {
    pub value: f64,
    /// Classes absent from the truth; they count as 0.
    pub unsupported: Vec<usize>,
}

pub fn macro_f1(pred: &LabelSet, truth: &LabelSet) -> Result<MacroF1> {
    let counts = confusion_counts(pred, truth)?;
    let unsupported: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.0 + c.2 == 0)
        .map(|(i, _)| i)
        .collect();
    let value = counts
        .iter()
        .enumerate()
        .map(|(i, &(tp, fp, fn_))| if unsupported.contains(&i) { 0.0 } else { f1_from_counts(tp, fp, fn_) })
        .sum::<f64>()
        / counts.len() as f64;
    Ok(MacroF1 { value, unsupported })
}
