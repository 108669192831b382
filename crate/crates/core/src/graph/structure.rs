use std::collections::{BTreeMap, HashMap};

use super::Graph;

/// Local clustering coefficient of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clustering {
    pub value: f64,
    /// False when the node has fewer than two neighbours; `value` is 0 then.
    pub defined: bool,
}

/// Fraction of neighbour pairs of `v` that are themselves adjacent.
pub fn clustering_coefficient(g: &Graph, v: usize) -> Clustering {
    let nb = g.neighbors(v);
    let d = nb.len();
    if d < 2 {
        return Clustering {
            value: 0.0,
            defined: false,
        };
    }
    // count each closed pair once via u < w
    let mut closed = 0usize;
    for &u in nb {
        for &w in g.neighbors(u) {
            if u < w && nb.contains(&w) {
                closed += 1;
            }
        }
    }
    Clustering {
        value: 2.0 * closed as f64 / (d * (d - 1)) as f64,
        defined: true,
    }
}

/// Degree of every node as an initial colouring.
pub fn degree_labels(g: &Graph) -> Vec<u64> {
    (0..g.node_count()).map(|v| g.degree(v) as u64).collect()
}

/// Output of WL refinement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WlResult {
    pub labels: Vec<u64>,
    pub multiset: BTreeMap<u64, usize>,
}

impl WlResult {
    fn new(labels: Vec<u64>) -> Self {
        let mut multiset = BTreeMap::new();
        for &l in &labels {
            *multiset.entry(l).or_insert(0) += 1;
        }
        WlResult { labels, multiset }
    }

    /// Number of distinct colours.
    pub fn colours(&self) -> usize {
        self.multiset.len()
    }
}

/// Weisfeiler-Lehman colour refinement with a dictionary shared across
/// graphs, so label multisets from different graphs are comparable when the
/// graphs are refined by the same refiner in lockstep.
#[derive(Debug, Default)]
pub struct WlRefiner {
    // (iteration, own colour, sorted neighbour colours) -> fresh colour
    dictionary: HashMap<(usize, u64, Vec<u64>), u64>,
    next: u64,
}

impl WlRefiner {
    pub fn new() -> Self {
        Self::default()
    }

    fn step(&mut self, g: &Graph, iter: usize, labels: &[u64]) -> Vec<u64> {
        (0..g.node_count())
            .map(|v| {
                let mut sig: Vec<u64> = g.neighbors(v).iter().map(|&u| labels[u]).collect();
                sig.sort_unstable();
                let key = (iter, labels[v], sig);
                let next = &mut self.next;
                *self.dictionary.entry(key).or_insert_with(|| {
                    *next += 1;
                    *next
                })
            })
            .collect()
    }

    /// Refines `init` for `iters` rounds.
    pub fn refine(&mut self, g: &Graph, init: &[u64], iters: usize) -> WlResult {
        let mut labels = init.to_vec();
        for it in 0..iters {
            labels = self.step(g, it, &labels);
        }
        WlResult::new(labels)
    }

    /// Refines two graphs side by side; returns both results.
    pub fn refine_pair(
        &mut self,
        a: (&Graph, &[u64]),
        b: (&Graph, &[u64]),
        iters: usize,
    ) -> (WlResult, WlResult) {
        let mut la = a.1.to_vec();
        let mut lb = b.1.to_vec();
        for it in 0..iters {
            la = self.step(a.0, it, &la);
            lb = self.step(b.0, it, &lb);
        }
        (WlResult::new(la), WlResult::new(lb))
    }
}

/// Refinement with a private dictionary. Labels are only comparable within
/// the one graph; use [`WlRefiner::refine_pair`] to compare graphs.
pub fn wl_refine(g: &Graph, init: &[u64], iters: usize) -> WlResult {
    WlRefiner::new().refine(g, init, iters)
}

/// Whether two labellings induce the same partition of the nodes.
pub fn same_partition(a: &[u64], b: &[u64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut bwd = HashMap::new();
    a.iter().zip(b).all(|(x, y)| {
        *fwd.entry(*x).or_insert(*y) == *y && *bwd.entry(*y).or_insert(*x) == *x
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_indices(n, edges, Tensor::zeros(n, 1)).unwrap()
    }

    #[test]
    fn complete_graph_is_fully_clustered() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        for v in 0..4 {
            assert_eq!(clustering_coefficient(&g, v).value, 1.0);
        }
    }

    #[test]
    fn path_centre_has_zero_clustering() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = clustering_coefficient(&g, 1);
        assert_eq!(c.value, 0.0);
        assert!(c.defined);
    }

    #[test]
    fn triangle_with_tail() {
        // A=0 B=1 C=2 D=3; edges AB BC CA CD
        let g = graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]);
        let c = clustering_coefficient(&g, 2);
        assert!((c.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn low_degree_is_flagged() {
        let g = graph(3, &[(0, 1)]);
        assert_eq!(
            clustering_coefficient(&g, 0),
            Clustering {
                value: 0.0,
                defined: false
            }
        );
        assert!(!clustering_coefficient(&g, 2).defined);
    }

    #[test]
    fn wl_fails_on_hexagon_vs_two_triangles() {
        let c6 = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]);
        let t2 = graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]);
        for iters in 0..5 {
            let mut r = WlRefiner::new();
            let (a, b) = r.refine_pair(
                (&c6, &degree_labels(&c6)),
                (&t2, &degree_labels(&t2)),
                iters,
            );
            assert_eq!(a.multiset, b.multiset);
        }
    }

    #[test]
    fn wl_separates_star_from_path() {
        let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let mut r = WlRefiner::new();
        let (a, b) = r.refine_pair(
            (&star, &degree_labels(&star)),
            (&path, &degree_labels(&path)),
            1,
        );
        assert_ne!(a.multiset, b.multiset);
    }

    #[test]
    fn partition_comparison_ignores_names() {
        assert!(same_partition(&[1, 1, 2], &[7, 7, 3]));
        assert!(!same_partition(&[1, 1, 2], &[7, 8, 3]));
        assert!(!same_partition(&[1, 2, 2], &[7, 7, 7]));
    }
}
