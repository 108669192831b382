//! Immutable undirected graph storage with per-node features.

mod io;
mod labels;
mod structure;

pub use io::{
    read_edges, read_features, read_ids, read_labels, write_edges, write_features, write_ids,
    write_labels, FEATURE_MAGIC,
};
pub use labels::{LabelKind, LabelSet};
pub use structure::{
    clustering_coefficient, degree_labels, same_partition, wl_refine, Clustering, WlRefiner,
    WlResult,
};

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Result, SageError};

/// Compressed-row adjacency plus a dense feature matrix.
///
/// Neighbour lists are sorted, deduplicated and free of self-loops. Internal
/// indices follow the order in which ids were supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Graph {
    /// Builds a graph from external ids, an edge list over those ids and a
    /// feature matrix whose rows follow `ids`.
    pub fn build(ids: Vec<String>, edges: &[(String, String)], features: Tensor<f32>) -> Result<Graph> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(SageError::Format(format!("duplicate node id `{id}`")));
            }
        }
        let lookup = |id: &String| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| SageError::UnknownNode(id.clone()))
        };
        let pairs = edges
            .iter()
            .map(|(u, v)| Ok((lookup(u)?, lookup(v)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(ids, index, &pairs, features)
    }

    /// Builds a graph over `0..n` with ids equal to the decimal index.
    pub fn from_indices(n: usize, edges: &[(usize, usize)], features: Tensor<f32>) -> Result<Graph> {
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let index = ids.iter().cloned().zip(0..).collect();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(SageError::NodeOutOfRange {
                index: u.max(v),
                nodes: n,
            });
        }
        Self::assemble(ids, index, edges, features)
    }

    fn assemble(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        pairs: &[(usize, usize)],
        features: Tensor<f32>,
    ) -> Result<Graph> {
        let n = ids.len();
        if features.rows() != n {
            return Err(SageError::LengthMismatch {
                what: "feature rows",
                expected: n,
                got: features.rows(),
            });
        }
        if let Some(pos) = features.data().iter().position(|x| !x.is_finite()) {
            let cols = features.cols().max(1);
            return Err(SageError::NonFiniteFeature {
                row: pos / cols,
                col: pos % cols,
            });
        }
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in pairs {
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self::from_lists(lists, features, ids, index))
    }

    fn from_lists(
        lists: Vec<Vec<usize>>,
        features: Tensor<f32>,
        ids: Vec<String>,
        index: HashMap<String, usize>,
    ) -> Graph {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for l in lists {
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        Graph {
            offsets,
            neighbors,
            features,
            ids,
            index,
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    /// Number of undirected edges, counting each stored adjacency pair once.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).contains(&v)
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v < self.node_count() {
            Ok(())
        } else {
            Err(SageError::NodeOutOfRange {
                index: v,
                nodes: self.node_count(),
            })
        }
    }

    /// Undirected edges as `(u, v)` with `u < v`, in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    /// Same structure with a different feature matrix.
    pub fn with_features(&self, features: Tensor<f32>) -> Result<Graph> {
        if features.rows() != self.node_count() {
            return Err(SageError::LengthMismatch {
                what: "feature rows",
                expected: self.node_count(),
                got: features.rows(),
            });
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// Limits every neighbour list to `max_degree` entries. Over-cap lists are
    /// replaced by a uniform subsample without replacement; each list is
    /// capped on its own, so the result may be asymmetric.
    pub fn cap_degrees<R: Rng + ?Sized>(&self, max_degree: usize, rng: &mut R) -> Result<Graph> {
        if max_degree == 0 {
            return Err(SageError::InvalidConfig("max_degree must be >= 1".into()));
        }
        let lists = (0..self.node_count())
            .map(|v| {
                let nb = self.neighbors(v);
                if nb.len() <= max_degree {
                    nb.to_vec()
                } else {
                    let mut keep: Vec<usize> = index::sample(rng, nb.len(), max_degree)
                        .into_iter()
                        .map(|i| nb[i])
                        .collect();
                    keep.sort_unstable();
                    keep
                }
            })
            .collect();
        Ok(Self::from_lists(
            lists,
            self.features.clone(),
            self.ids.clone(),
            self.index.clone(),
        ))
    }

    /// Subgraph induced by `nodes`; node `i` of the result is `nodes[i]`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut remap = vec![usize::MAX; self.node_count()];
        for (i, &v) in nodes.iter().enumerate() {
            self.check_node(v)?;
            remap[v] = i;
        }
        let lists = nodes
            .iter()
            .map(|&v| {
                self.neighbors(v)
                    .iter()
                    .filter_map(|&u| (remap[u] != usize::MAX).then_some(remap[u]))
                    .collect::<Vec<_>>()
            })
            .map(|mut l| {
                l.sort_unstable();
                l
            })
            .collect();
        let ids: Vec<String> = nodes.iter().map(|&v| self.ids[v].clone()).collect();
        let index = ids.iter().cloned().zip(0..).collect();
        Ok(Self::from_lists(
            lists,
            self.features.select_rows(nodes),
            ids,
            index,
        ))
    }

    /// Side-by-side copy of `parts` with no edges between them. Node indices
    /// of part `k` are shifted by the sizes of the parts before it.
    pub fn disjoint_union(parts: &[&Graph]) -> Result<Graph> {
        let first = parts.first().ok_or(SageError::Empty("graph list"))?;
        let dim = first.feature_dim();
        let mut lists = Vec::new();
        let mut ids = Vec::new();
        let mut feats = Vec::new();
        for g in parts {
            if g.feature_dim() != dim {
                return Err(SageError::LengthMismatch {
                    what: "feature columns",
                    expected: dim,
                    got: g.feature_dim(),
                });
            }
            let base = lists.len();
            lists.extend((0..g.node_count()).map(|v| g.neighbors(v).iter().map(|u| u + base).collect::<Vec<_>>()));
            ids.extend(g.ids.iter().cloned());
            feats.extend_from_slice(g.features.data());
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(SageError::Format(format!("duplicate node id `{id}`")));
            }
        }
        let features = Tensor::from_vec(ids.len(), dim, feats)?;
        Ok(Self::from_lists(lists, features, ids, index))
    }

    /// Copy of the graph whose neighbour lists are stored in a random order.
    /// Only useful for checking that results do not depend on list order.
    pub fn shuffled_adjacency<R: Rng + ?Sized>(&self, rng: &mut R) -> Graph {
        use rand::seq::SliceRandom;
        let mut g = self.clone();
        for v in 0..g.node_count() {
            let (lo, hi) = (g.offsets[v], g.offsets[v + 1]);
            g.neighbors[lo..hi].shuffle(rng);
        }
        g
    }
}
