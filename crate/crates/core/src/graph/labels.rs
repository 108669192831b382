use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Single,
    Multi,
}

/// Per-node targets: one class index per node, or a 0/1 vector of fixed width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelSet {
    Single { classes: usize, labels: Vec<usize> },
    Multi { width: usize, labels: Vec<Vec<bool>> },
}

impl LabelSet {
    pub fn single(classes: usize, labels: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(SageError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(LabelSet::Single { classes, labels })
    }

    pub fn multi(width: usize, labels: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|l| l.len() != width) {
            return Err(SageError::LengthMismatch {
                what: "multi-label width",
                expected: width,
                got: bad.len(),
            });
        }
        Ok(LabelSet::Multi { width, labels })
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            LabelSet::Single { .. } => LabelKind::Single,
            LabelSet::Multi { .. } => LabelKind::Multi,
        }
    }

    /// Number of classes (single) or label width (multi).
    pub fn width(&self) -> usize {
        match self {
            LabelSet::Single { classes, .. } => *classes,
            LabelSet::Multi { width, .. } => *width,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LabelSet::Single { labels, .. } => labels.len(),
            LabelSet::Multi { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> LabelSet {
        match self {
            LabelSet::Single { classes, labels } => LabelSet::Single {
                classes: *classes,
                labels: rows.iter().map(|&r| labels[r]).collect(),
            },
            LabelSet::Multi { width, labels } => LabelSet::Multi {
                width: *width,
                labels: rows.iter().map(|&r| labels[r].clone()).collect(),
            },
        }
    }

    /// Whether node `i` carries label `c`.
    pub fn has(&self, i: usize, c: usize) -> bool {
        match self {
            LabelSet::Single { labels, .. } => labels[i] == c,
            LabelSet::Multi { labels, .. } => labels[i][c],
        }
    }

    /// Class indices for single-label sets.
    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            LabelSet::Single { labels, .. } => Some(labels),
            LabelSet::Multi { .. } => None,
        }
    }

    /// Row-major 0/1 indicator matrix, `len() x width()`.
    pub fn indicator(&self) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; self.len() * w];
        for i in 0..self.len() {
            for c in 0..w {
                if self.has(i, c) {
                    out[i * w + c] = 1.0;
                }
            }
        }
        out
    }

    /// Concatenates label sets of the same kind and width.
    pub fn concat(parts: &[&LabelSet]) -> Result<LabelSet> {
        let first = parts.first().ok_or(SageError::Empty("label sets"))?;
        let mut out = match first {
            LabelSet::Single { classes, .. } => LabelSet::Single {
                classes: *classes,
                labels: Vec::new(),
            },
            LabelSet::Multi { width, .. } => LabelSet::Multi {
                width: *width,
                labels: Vec::new(),
            },
        };
        for p in parts {
            match (&mut out, p) {
                (LabelSet::Single { classes, labels }, LabelSet::Single { classes: c, labels: l })
                    if classes == c =>
                {
                    labels.extend_from_slice(l)
                }
                (LabelSet::Multi { width, labels }, LabelSet::Multi { width: w, labels: l })
                    if width == w =>
                {
                    labels.extend_from_slice(l)
                }
                _ => return Err(SageError::Format("incompatible label sets".into())),
            }
        }
        Ok(out)
    }
}
