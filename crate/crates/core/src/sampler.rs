//! Stochastic set construction: fixed-size neighbour draws, minibatch
//! frontier plans, random-walk co-occurrence pairs and negative sampling.
//!
//! Every function takes the random stream from the caller.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SageError};
use crate::graph::Graph;

/// Draws exactly `size` neighbours of `v`.
///
/// Without replacement when the degree allows it, with replacement when the
/// degree is smaller than `size`, and `size` copies of `v` itself for an
/// isolated node.
pub fn sample_neighbors<R: Rng + ?Sized>(g: &Graph, v: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let nb = g.neighbors(v);
    let d = nb.len();
    if size == 0 {
        Vec::new()
    } else if d == 0 {
        vec![v; size]
    } else if d >= size {
        index::sample(rng, d, size).into_iter().map(|i| nb[i]).collect()
    } else {
        (0..size).map(|_| nb[rng.random_range(0..d)]).collect()
    }
}

/// How a plan draws neighbours when a node has fewer than `size` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Replacement {
    /// Always exactly `size` draws, repeating neighbours if necessary.
    #[default]
    AsNeeded,
    /// Never repeat: low-degree nodes contribute their whole neighbourhood.
    /// Isolated nodes still get one self draw.
    Never,
}

/// Draws up to `size` distinct neighbours of `v`; all of them when the degree
/// is at most `size`.
pub fn sample_distinct<R: Rng + ?Sized>(g: &Graph, v: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let nb = g.neighbors(v);
    if size == 0 {
        Vec::new()
    } else if nb.is_empty() {
        vec![v]
    } else if nb.len() > size {
        index::sample(rng, nb.len(), size).into_iter().map(|i| nb[i]).collect()
    } else {
        nb.to_vec()
    }
}

/// Sampled neighbourhoods for one aggregation depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSample {
    /// `offsets[i]..offsets[i + 1]` delimits the draws of the i-th target node.
    pub offsets: Vec<usize>,
    /// Graph indices of the drawn neighbours.
    pub nodes: Vec<usize>,
    /// Positions of the drawn neighbours inside the previous frontier.
    pub positions: Vec<usize>,
}

impl LayerSample {
    pub fn targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.nodes[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Everything a minibatch forward pass touches, sampled up front.
///
/// `frontiers[k]` is the node set needed at depth `k`; `frontiers[depth]` is
/// the (deduplicated) batch. Each frontier starts with the next-deeper one in
/// the same order, so node `i` of `frontiers[k]` sits at position `i` of
/// `frontiers[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub frontiers: Vec<Vec<usize>>,
    /// `layers[k - 1]` holds the draws for the nodes of `frontiers[k]`.
    pub layers: Vec<LayerSample>,
    pub sizes: Vec<usize>,
}

impl MinibatchPlan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn batch(&self) -> &[usize] {
        &self.frontiers[self.depth()]
    }

    /// For each batch node, the number of neighbour slots its unrolled
    /// computation tree consumes across all depths.
    pub fn tree_slots_per_item(&self) -> Vec<usize> {
        // slots[k][i]: slots below node i of frontier k (k = 0 has none)
        let mut below = vec![0usize; self.frontiers[0].len()];
        for k in 1..=self.depth() {
            let layer = &self.layers[k - 1];
            below = (0..layer.targets())
                .map(|i| {
                    let ps = &layer.positions[layer.offsets[i]..layer.offsets[i + 1]];
                    ps.len() + ps.iter().map(|&p| below[p]).sum::<usize>()
                })
                .collect();
        }
        below
    }

    /// Total draws stored in the plan.
    pub fn stored_slots(&self) -> usize {
        self.layers.iter().map(|l| l.nodes.len()).sum()
    }
}

/// Expected per-item slot count, `sum_k prod_{i >= k} S_i`.
pub fn expected_tree_slots(sizes: &[usize]) -> usize {
    (0..sizes.len())
        .map(|k| sizes[k..].iter().product::<usize>())
        .sum()
}

/// Samples the frontier sets for `batch`. `sizes[k - 1]` is the number of
/// neighbours drawn at aggregation depth `k`, so batch nodes draw
/// `sizes[K - 1]` neighbours.
pub fn build_minibatch_plan<R: Rng + ?Sized>(
    g: &Graph,
    batch: &[usize],
    sizes: &[usize],
    rng: &mut R,
) -> Result<MinibatchPlan> {
    build_minibatch_plan_with(g, batch, sizes, Replacement::AsNeeded, rng)
}

/// [`build_minibatch_plan`] with an explicit replacement policy.
pub fn build_minibatch_plan_with<R: Rng + ?Sized>(
    g: &Graph,
    batch: &[usize],
    sizes: &[usize],
    mode: Replacement,
    rng: &mut R,
) -> Result<MinibatchPlan> {
    if sizes.is_empty() {
        return Err(SageError::InvalidConfig("plan depth must be >= 1".into()));
    }
    if batch.is_empty() {
        return Err(SageError::Empty("minibatch"));
    }
    for &v in batch {
        g.check_node(v)?;
    }
    let depth = sizes.len();
    // one independent stream per depth
    let mut streams: Vec<ChaCha8Rng> = (0..depth)
        .map(|_| ChaCha8Rng::seed_from_u64(rng.random()))
        .collect();

    let mut top = Vec::with_capacity(batch.len());
    let mut seen = HashMap::new();
    for &v in batch {
        if seen.insert(v, top.len()).is_none() {
            top.push(v);
        }
    }

    let mut frontiers = vec![Vec::new(); depth + 1];
    let mut layers = vec![
        LayerSample {
            offsets: Vec::new(),
            nodes: Vec::new(),
            positions: Vec::new(),
        };
        depth
    ];
    frontiers[depth] = top;
    for k in (1..=depth).rev() {
        let current = &frontiers[k];
        let mut next = current.clone();
        let mut pos: HashMap<usize, usize> = next.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut layer = LayerSample {
            offsets: Vec::with_capacity(current.len() + 1),
            nodes: Vec::with_capacity(current.len() * sizes[k - 1]),
            positions: Vec::with_capacity(current.len() * sizes[k - 1]),
        };
        layer.offsets.push(0);
        let stream = &mut streams[depth - k];
        for &u in current {
            let draws = match mode {
                Replacement::AsNeeded => sample_neighbors(g, u, sizes[k - 1], stream),
                Replacement::Never => sample_distinct(g, u, sizes[k - 1], stream),
            };
            for w in draws {
                let p = *pos.entry(w).or_insert_with(|| {
                    next.push(w);
                    next.len() - 1
                });
                layer.nodes.push(w);
                layer.positions.push(p);
            }
            layer.offsets.push(layer.nodes.len());
        }
        layers[k - 1] = layer;
        frontiers[k - 1] = next;
    }
    Ok(MinibatchPlan {
        frontiers,
        layers,
        sizes: sizes.to_vec(),
    })
}

/// Random-walk settings for co-occurrence pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    /// Steps per walk; a walk visits `walk_len + 1` nodes.
    pub walk_len: usize,
    /// Maximum position distance of a co-occurring pair.
    pub window: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 50,
            walk_len: 5,
            window: 5,
        }
    }
}

/// Ordered co-occurrence pairs `(u, v)` with `u != v`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WalkPairs {
    pub pairs: Vec<(usize, usize)>,
}

impl WalkPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One uniform random walk of `steps` steps from `start`.
pub fn random_walk<R: Rng + ?Sized>(g: &Graph, start: usize, steps: usize, rng: &mut R) -> Vec<usize> {
    let mut walk = Vec::with_capacity(steps + 1);
    walk.push(start);
    let mut cur = start;
    for _ in 0..steps {
        let nb = g.neighbors(cur);
        if nb.is_empty() {
            break;
        }
        cur = nb[rng.random_range(0..nb.len())];
        walk.push(cur);
    }
    walk
}

fn emit_pairs(walk: &[usize], window: usize, out: &mut Vec<(usize, usize)>) {
    for i in 0..walk.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(walk.len() - 1);
        for j in lo..=hi {
            if j != i && walk[i] != walk[j] {
                out.push((walk[i], walk[j]));
            }
        }
    }
}

/// Walks from every node of `g`.
pub fn generate_walks<R: Rng + ?Sized>(g: &Graph, cfg: &WalkConfig, rng: &mut R) -> Result<WalkPairs> {
    let starts: Vec<usize> = (0..g.node_count()).collect();
    generate_walks_from(g, &starts, cfg, rng)
}

/// Walks from the given start nodes only.
pub fn generate_walks_from<R: Rng + ?Sized>(
    g: &Graph,
    starts: &[usize],
    cfg: &WalkConfig,
    rng: &mut R,
) -> Result<WalkPairs> {
    if cfg.walk_len == 0 {
        return Err(SageError::InvalidConfig("walk length must be >= 1".into()));
    }
    let mut pairs = Vec::new();
    for &s in starts {
        g.check_node(s)?;
        if g.degree(s) == 0 {
            continue;
        }
        for _ in 0..cfg.walks_per_node {
            let walk = random_walk(g, s, cfg.walk_len, rng);
            emit_pairs(&walk, cfg.window, &mut pairs);
        }
    }
    Ok(WalkPairs { pairs })
}

/// Smoothed degree distribution `P(v) ~ deg(v)^alpha` for negative draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDistribution {
    cumulative: Vec<f64>,
}

impl NegativeDistribution {
    pub fn new(g: &Graph, alpha: f64) -> Result<Self> {
        Self::from_degrees(
            &(0..g.node_count()).map(|v| g.degree(v)).collect::<Vec<_>>(),
            alpha,
        )
    }

    /// Nodes of degree zero get zero weight (also when `alpha == 0`).
    pub fn from_degrees(degrees: &[usize], alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(SageError::InvalidConfig(format!("smoothing {alpha} < 0")));
        }
        let weights: Vec<f64> = degrees
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { (d as f64).powf(alpha) })
            .collect();
        Self::from_weights(&weights)
    }

    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|&w| {
                acc += w.max(0.0);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(SageError::InvalidConfig(
                "negative distribution has no positive weight".into(),
            ));
        }
        Ok(NegativeDistribution { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn probability(&self, v: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if v == 0 { 0.0 } else { self.cumulative[v - 1] };
        (self.cumulative[v] - prev) / total
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.random::<f64>() * total;
        // first index with cumulative > x
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }

    /// `q` i.i.d. draws with replacement.
    pub fn draw_negatives<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Vec<usize> {
        (0..q).map(|_| self.draw(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_indices(n, edges, Tensor::zeros(n, 1)).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn path5() -> Graph {
        graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)])
    }

    #[test]
    fn degree_one_forces_replacement() {
        let g = graph(2, &[(0, 1)]);
        assert_eq!(sample_neighbors(&g, 0, 3, &mut rng(0)), vec![1, 1, 1]);
        assert!(sample_neighbors(&g, 0, 0, &mut rng(0)).is_empty());
    }

    #[test]
    fn isolated_node_repeats_itself() {
        let g = graph(2, &[]);
        assert_eq!(sample_neighbors(&g, 1, 4, &mut rng(0)), vec![1; 4]);
    }

    #[test]
    fn draws_without_replacement_when_degree_allows() {
        let edges: Vec<_> = (1..=10).map(|i| (0, i)).collect();
        let g = graph(11, &edges);
        let mut r = rng(5);
        for _ in 0..100 {
            let mut s = sample_neighbors(&g, 0, 5, &mut r);
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 5);
        }
    }

    #[test]
    fn neighbour_draws_are_uniform() {
        // deg 10, size 5: each neighbour appears with probability 1/2
        let edges: Vec<_> = (1..=10).map(|i| (0, i)).collect();
        let g = graph(11, &edges);
        let mut r = rng(11);
        let draws = 100_000;
        let mut counts = [0usize; 11];
        for _ in 0..draws {
            for v in sample_neighbors(&g, 0, 5, &mut r) {
                counts[v] += 1;
            }
        }
        let sigma = (0.25 / draws as f64).sqrt();
        let mut chi2 = 0.0;
        let expected = draws as f64 * 0.5;
        for &c in &counts[1..] {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() < 3.0 * sigma, "{f}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // chi-square with 9 dof: p = 0.001 at 27.88
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn full_expansion_on_path() {
        let g = path5();
        let plan = build_minibatch_plan(&g, &[2], &[2, 2], &mut rng(1)).unwrap();
        let sorted = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v
        };
        assert_eq!(plan.frontiers[2], vec![2]);
        assert_eq!(sorted(&plan.frontiers[1]), vec![1, 2, 3]);
        assert_eq!(sorted(&plan.frontiers[0]), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn two_hop_plan_size_bound() {
        let mut r = rng(9);
        let edges: Vec<(usize, usize)> = (0..3000)
            .map(|_| (r.random_range(0..400), r.random_range(0..400)))
            .collect();
        let g = graph(400, &edges);
        for v in 0..50 {
            let plan = build_minibatch_plan(&g, &[v], &[25, 10], &mut r).unwrap();
            assert_eq!(plan.frontiers[1].len() <= 11, true);
            assert!(plan.frontiers[0].len() <= 1 + 10 + 250);
        }
    }

    #[test]
    fn one_hop_plan_on_hub() {
        let edges: Vec<_> = (1..=100).map(|i| (0, i)).collect();
        let g = graph(101, &edges);
        let plan = build_minibatch_plan(&g, &[0], &[25], &mut rng(2)).unwrap();
        assert!(plan.frontiers[0].len() <= 26);
        assert_eq!(plan.frontiers[0].len(), 26);
    }

    #[test]
    fn plan_rejects_bad_input() {
        let g = path5();
        assert!(build_minibatch_plan(&g, &[9], &[2], &mut rng(0)).is_err());
        assert!(build_minibatch_plan(&g, &[], &[2], &mut rng(0)).is_err());
        assert!(build_minibatch_plan(&g, &[0], &[], &mut rng(0)).is_err());
    }

    #[test]
    fn tree_slots_match_closed_form() {
        let g = path5();
        let plan = build_minibatch_plan(&g, &[0, 2, 4], &[3, 2], &mut rng(4)).unwrap();
        assert_eq!(expected_tree_slots(&[3, 2]), 2 + 6);
        assert!(plan.tree_slots_per_item().iter().all(|&s| s == 8));
    }

    #[test]
    fn distinct_mode_takes_whole_small_neighbourhoods() {
        let g = path5();
        let plan = build_minibatch_plan_with(&g, &[2, 0], &[10, 10], Replacement::Never, &mut rng(3)).unwrap();
        for (k, layer) in plan.layers.iter().enumerate() {
            for (i, &u) in plan.frontiers[k + 1].iter().enumerate() {
                let mut got = layer.of(i).to_vec();
                got.sort_unstable();
                assert_eq!(got, g.neighbors(u));
            }
        }
        let lone = graph(2, &[]);
        assert_eq!(sample_distinct(&lone, 1, 4, &mut rng(0)), vec![1]);
    }

    #[test]
    fn walk_on_isolated_edge_alternates() {
        let g = graph(2, &[(0, 1)]);
        assert_eq!(random_walk(&g, 0, 5, &mut rng(0)), vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn triangle_window_one_gives_four_pairs() {
        let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        let cfg = WalkConfig {
            walks_per_node: 1,
            walk_len: 2,
            window: 1,
        };
        let pairs = generate_walks_from(&g, &[0], &cfg, &mut rng(3)).unwrap();
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn walk_defaults() {
        let cfg = WalkConfig::default();
        assert_eq!((cfg.walks_per_node, cfg.walk_len), (50, 5));
    }

    #[test]
    fn isolated_nodes_yield_no_pairs() {
        let g = graph(3, &[(0, 1)]);
        let pairs = generate_walks_from(&g, &[2], &WalkConfig::default(), &mut rng(0)).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn smoothed_degree_probabilities() {
        let d = NegativeDistribution::from_degrees(&[1, 16], 0.75).unwrap();
        assert!((d.probability(0) - 1.0 / 9.0).abs() < 1e-12);
        assert!((d.probability(1) - 8.0 / 9.0).abs() < 1e-12);
        let u = NegativeDistribution::from_degrees(&[1, 16, 0, 3], 0.0).unwrap();
        assert!((u.probability(0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(u.probability(2), 0.0);
        assert!(NegativeDistribution::from_degrees(&[0, 0], 0.75).is_err());
    }

    #[test]
    fn negative_draw_frequencies() {
        let d = NegativeDistribution::from_degrees(&[1, 16], 0.75).unwrap();
        let n = 100_000;
        let draws = d.draw_negatives(n, &mut rng(8));
        let f0 = draws.iter().filter(|&&v| v == 0).count() as f64 / n as f64;
        let p = 1.0 / 9.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f0 - p).abs() < 3.0 * sigma, "{f0}");
    }
}
