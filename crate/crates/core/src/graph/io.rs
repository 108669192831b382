//! Text and binary formats for ids, edges, features and labels.
//!
//! * ids: one id per line, defines index order
//! * edges: `u<TAB>v` per line, `#` starts a comment line
//! * features: `SAGEF1`, u64 rows, u64 cols (little-endian), then row-major f32
//! * labels: `id<TAB>class` or `id<TAB>b1,...,bL`

use std::io::{BufRead, Read, Write};

use super::{Graph, LabelKind, LabelSet};
use crate::autodiff::Tensor;
use crate::error::{Result, SageError};

pub const FEATURE_MAGIC: &[u8; 6] = b"SAGEF1";

fn content_lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let t = l.trim_end_matches(['\r', '\n']).to_string();
            if t.trim().is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t)))
            }
        }
    })
}

pub fn read_ids<R: BufRead>(r: R) -> Result<Vec<String>> {
    content_lines(r)
        .map(|l| l.map(|(_, s)| s.trim().to_string()))
        .collect()
}

pub fn write_ids<W: Write>(mut w: W, ids: &[String]) -> Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

pub fn read_edges<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    content_lines(r)
        .map(|l| {
            let (line, s) = l?;
            let mut parts = s.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(u), Some(v), None) if !u.is_empty() && !v.is_empty() => {
                    Ok((u.to_string(), v.to_string()))
                }
                _ => Err(SageError::Parse {
                    line,
                    msg: format!("expected `u<TAB>v`, got `{s}`"),
                }),
            }
        })
        .collect()
}

/// Writes each undirected edge once, smaller index first.
pub fn write_edges<W: Write>(mut w: W, g: &Graph) -> Result<()> {
    for (u, v) in g.edges() {
        writeln!(w, "{}\t{}", g.id(u), g.id(v))?;
    }
    Ok(())
}

pub fn write_features<W: Write>(mut w: W, t: &Tensor<f32>) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.cols() as u64).to_le_bytes())?;
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| SageError::Format("feature file too short".into()))?;
    if &magic != FEATURE_MAGIC {
        return Err(SageError::Format("bad feature magic".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| SageError::Format("feature shape overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(SageError::Format(format!(
            "feature payload is {} bytes, expected {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Reads labels for every node of `g`. The kind is inferred from the first
/// value (a comma means multi-label) unless `kind` is given; for single-label
/// files the class count is `max + 1` unless `classes` is given.
pub fn read_labels<R: BufRead>(
    r: R,
    g: &Graph,
    kind: Option<LabelKind>,
    classes: Option<usize>,
) -> Result<LabelSet> {
    let mut raw: Vec<Option<String>> = vec![None; g.node_count()];
    for l in content_lines(r) {
        let (line, s) = l?;
        let (id, val) = s.split_once('\t').ok_or_else(|| SageError::Parse {
            line,
            msg: format!("expected `id<TAB>label`, got `{s}`"),
        })?;
        let v = g
            .index_of(id)
            .ok_or_else(|| SageError::UnknownNode(id.to_string()))?;
        raw[v] = Some(val.trim().to_string());
    }
    let values = raw
        .into_iter()
        .enumerate()
        .map(|(v, x)| {
            x.ok_or_else(|| SageError::Format(format!("no label for node `{}`", g.id(v))))
        })
        .collect::<Result<Vec<_>>>()?;
    let kind = kind.unwrap_or_else(|| {
        if values.first().is_some_and(|v| v.contains(',')) {
            LabelKind::Multi
        } else {
            LabelKind::Single
        }
    });
    let bad = |msg: String| SageError::Parse { line: 0, msg };
    match kind {
        LabelKind::Single => {
            let labels = values
                .iter()
                .map(|v| v.parse::<usize>().map_err(|e| bad(format!("label `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            LabelSet::single(classes, labels)
        }
        LabelKind::Multi => {
            let labels = values
                .iter()
                .map(|v| {
                    v.split(',')
                        .map(|b| match b.trim() {
                            "0" => Ok(false),
                            "1" => Ok(true),
                            o => Err(bad(format!("multi-label bit `{o}`"))),
                        })
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let width = labels.first().map_or(0, Vec::len);
            LabelSet::multi(width, labels)
        }
    }
}

pub fn write_labels<W: Write>(mut w: W, g: &Graph, labels: &LabelSet) -> Result<()> {
    for v in 0..labels.len() {
        match labels {
            LabelSet::Single { labels, .. } => writeln!(w, "{}\t{}", g.id(v), labels[v])?,
            LabelSet::Multi { labels, .. } => {
                let bits: Vec<&str> = labels[v].iter().map(|&b| if b { "1" } else { "0" }).collect();
                writeln!(w, "{}\t{}", g.id(v), bits.join(","))?
            }
        }
    }
    Ok(())
}
