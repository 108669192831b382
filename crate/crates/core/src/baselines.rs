//! Transductive lookup-table embeddings trained on the same pair loss, online
//! embedding of nodes added after training, and the rotation invariance of
//! that objective.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Result, SageError};
use crate::graph::Graph;
use crate::model::unsupervised_loss_value;
use crate::sampler::{generate_walks_from, NegativeDistribution, WalkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub negatives: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub walks: WalkConfig,
    /// Start from all-zero vectors instead of small random ones.
    pub zero_init: bool,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 128,
            negatives: 20,
            alpha: 0.75,
            lr: 0.4,
            batch_size: 64,
            epochs: 1,
            max_steps: None,
            walks: WalkConfig::default(),
            zero_init: false,
            seed: 0,
        }
    }
}

/// One directly optimised vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupEmbeddings {
    pub z: Tensor<f64>,
    pub trainable: Vec<bool>,
}

impl LookupEmbeddings {
    pub fn new(n: usize, cfg: &SkipgramConfig, rng: &mut impl Rng) -> Self {
        let bound = 0.5 / cfg.dim as f64;
        let data = (0..n * cfg.dim)
            .map(|_| if cfg.zero_init { 0.0 } else { rng.random_range(-bound..bound) })
            .collect();
        LookupEmbeddings {
            z: Tensor::from_vec(n, cfg.dim, data).expect("shape matches"),
            trainable: vec![true; n],
        }
    }

    /// Hash of the bit patterns of the given rows.
    pub fn checksum(&self, rows: &[usize]) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for &r in rows {
            for x in self.z.row(r) {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn normalize(&mut self) {
        for r in 0..self.z.rows() {
            let row = self.z.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
}

/// Pair loss on lookup vectors with one shared set of negatives.
pub fn skipgram_objective(z: &Tensor<f64>, pairs: &[(usize, usize)], negatives: &[usize]) -> Result<f64> {
    let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    unsupervised_loss_value(&z.select_rows(&us), &z.select_rows(&vs), &z.select_rows(negatives))
}

fn sig(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain SGD over `pairs` in batches; only rows marked trainable move.
/// Returns the number of updates.
fn sgd_pairs(
    emb: &mut LookupEmbeddings,
    pairs: &mut [(usize, usize)],
    dist: &NegativeDistribution,
    cfg: &SkipgramConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let d = emb.z.cols();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        pairs.shuffle(rng);
        for batch in pairs.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                return Ok(steps);
            }
            let negs = dist.draw_negatives(cfg.negatives, rng);
            let scale = 1.0 / batch.len() as f64;
            // sorted so the update order is fixed
            let mut grad: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let z = &emb.z;
            for &(u, v) in batch {
                let (zu, zv) = (z.row(u), z.row(v));
                let cp = sig(dot(zu, zv)) - 1.0;
                let gu = grad.entry(u).or_insert_with(|| vec![0.0; d]);
                for c in 0..d {
                    gu[c] += scale * cp * zv[c];
                }
                let gv = grad.entry(v).or_insert_with(|| vec![0.0; d]);
                for c in 0..d {
                    gv[c] += scale * cp * zu[c];
                }
                for &n in &negs {
                    let zn = z.row(n);
                    let cn = sig(dot(zu, zn));
                    let gu = grad.get_mut(&u).expect("inserted above");
                    for c in 0..d {
                        gu[c] += scale * cn * zn[c];
                    }
                    let gn = grad.entry(n).or_insert_with(|| vec![0.0; d]);
                    for c in 0..d {
                        gn[c] += scale * cn * zu[c];
                    }
                }
            }
            for (r, g) in grad {
                if !emb.trainable[r] {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(SageError::Divergence {
                        step: steps,
                        msg: format!("non-finite lookup gradient for row {r}"),
                    });
                }
                for (x, gi) in emb.z.row_mut(r).iter_mut().zip(g) {
                    *x -= cfg.lr * gi;
                }
            }
            steps += 1;
        }
    }
    Ok(steps)
}

/// Optimises one vector per node on co-occurrence pairs.
pub fn train_skipgram(n: usize, pairs: &[(usize, usize)], dist: &NegativeDistribution, cfg: &SkipgramConfig) -> Result<LookupEmbeddings> {
    if pairs.is_empty() {
        return Err(SageError::Empty("walk pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = LookupEmbeddings::new(n, cfg, &mut rng);
    let mut pairs = pairs.to_vec();
    sgd_pairs(&mut emb, &mut pairs, dist, cfg, &mut rng)?;
    emb.normalize();
    Ok(emb)
}

/// Walks on `g` from `nodes` plus training, in one call.
pub fn train_skipgram_on(g: &Graph, nodes: &[usize], cfg: &SkipgramConfig) -> Result<LookupEmbeddings> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdee9);
    let pairs = generate_walks_from(g, nodes, &cfg.walks, &mut rng)?.pairs;
    let dist = NegativeDistribution::new(g, cfg.alpha)?;
    train_skipgram(g.node_count(), &pairs, &dist, cfg)
}

/// Which context nodes new nodes may learn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// Only pairs whose other end is an already trained node.
    Restricted,
    /// Any pair touching a new node.
    Unrestricted,
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub embeddings: LookupEmbeddings,
    pub steps: usize,
    pub elapsed: Duration,
    /// New nodes that no pair touched; they keep their initial vector.
    pub untouched: Vec<usize>,
}

/// Embeds `new_nodes` of `g` by a fresh SGD round with every other row
/// frozen. `trained` must have one row per node of `g`.
pub fn online_embed_new_nodes(
    trained: &LookupEmbeddings,
    g: &Graph,
    new_nodes: &[usize],
    mode: ContextMode,
    cfg: &SkipgramConfig,
) -> Result<OnlineReport> {
    let start = Instant::now();
    if trained.z.rows() != g.node_count() {
        return Err(SageError::LengthMismatch {
            what: "lookup rows",
            expected: g.node_count(),
            got: trained.z.rows(),
        });
    }
    let mut emb = trained.clone();
    emb.trainable = vec![false; g.node_count()];
    if new_nodes.is_empty() {
        return Ok(OnlineReport {
            embeddings: emb,
            steps: 0,
            elapsed: start.elapsed(),
            untouched: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fresh = LookupEmbeddings::new(new_nodes.len(), cfg, &mut rng);
    for (i, &v) in new_nodes.iter().enumerate() {
        g.check_node(v)?;
        emb.z.row_mut(v).copy_from_slice(fresh.z.row(i));
        emb.trainable[v] = true;
    }
    let is_new = emb.trainable.clone();
    let all = generate_walks_from(g, new_nodes, &cfg.walks, &mut rng)?.pairs;
    let mut pairs: Vec<(usize, usize)> = all
        .into_iter()
        .filter(|&(u, v)| match mode {
            ContextMode::Restricted => is_new[u] != is_new[v],
            ContextMode::Unrestricted => is_new[u] || is_new[v],
        })
        .collect();
    let weights: Vec<f64> = (0..g.node_count())
        .map(|v| match mode {
            ContextMode::Restricted if is_new[v] => 0.0,
            _ => (g.degree(v) as f64).powf(cfg.alpha) * f64::from(g.degree(v) > 0),
        })
        .collect();
    let mut touched = vec![false; g.node_count()];
    for &(u, v) in &pairs {
        touched[u] = true;
        touched[v] = true;
    }
    let untouched: Vec<usize> = new_nodes.iter().copied().filter(|&v| !touched[v]).collect();
    if !untouched.is_empty() {
        warn!("{} new nodes have no usable pairs and keep their initial vectors", untouched.len());
    }
    let steps = if pairs.is_empty() {
        0
    } else {
        let dist = NegativeDistribution::from_weights(&weights)?;
        sgd_pairs(&mut emb, &mut pairs, &dist, cfg, &mut rng)?
    };
    for &v in new_nodes {
        let row = emb.z.row_mut(v);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    emb.trainable = is_new;
    Ok(OnlineReport {
        embeddings: emb,
        steps,
        elapsed: start.elapsed(),
        untouched,
    })
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix, redrawn
/// until `QtQ` is the identity within 1e-10.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Tensor<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        for i in 0..d {
            for j in 0..i {
                let p = dot(&cols[i], &cols[j]);
                let (a, b) = cols.split_at_mut(i);
                for (x, y) in b[0].iter_mut().zip(&a[j]) {
                    *x -= p * y;
                }
            }
            let n = dot(&cols[i], &cols[i]).sqrt();
            cols[i].iter_mut().for_each(|x| *x /= n);
        }
        let mut q = Tensor::zeros(d, d);
        for (j, c) in cols.iter().enumerate() {
            for (i, &x) in c.iter().enumerate() {
                q.set(i, j, x);
            }
        }
        let qtq = q.transpose().matmul(&q).expect("square");
        if qtq.max_abs_diff(&Tensor::identity(d)) < 1e-10 {
            return q;
        }
    }
}

/// Largest `|J(Z) - J(ZQ)|` over `trials` random orthogonal `Q`.
pub fn rotation_invariance_check(
    z: &Tensor<f64>,
    objective: impl Fn(&Tensor<f64>) -> Result<f64>,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let base = objective(z)?;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let q = random_orthogonal(z.cols(), rng);
        worst = worst.max((objective(&z.matmul(&q)?)? - base).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_pair_beats_negative_after_training() {
        // a-b is the only positive pair; c only ever appears as a negative
        let dist = NegativeDistribution::from_weights(&[0.0, 0.0, 1.0]).unwrap();
        let cfg = SkipgramConfig {
            dim: 8,
            negatives: 1,
            epochs: 200,
            lr: 0.5,
            batch_size: 1,
            ..SkipgramConfig::default()
        };
        let z = train_skipgram(3, &[(0, 1)], &dist, &cfg).unwrap().z;
        assert!(dot(z.row(0), z.row(1)) > dot(z.row(0), z.row(2)));
    }

    #[test]
    fn zero_init_starts_at_twenty_one_ln2() {
        let cfg = SkipgramConfig {
            dim: 4,
            zero_init: true,
            ..SkipgramConfig::default()
        };
        let e = LookupEmbeddings::new(5, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let j = skipgram_objective(&e.z, &[(0, 1), (2, 3)], &[4; 20]).unwrap();
        assert!((j - 21.0 * 2f64.ln()).abs() < 1e-12);
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_indices(n, &edges, Tensor::zeros(n, 1)).unwrap()
    }

    fn small_cfg() -> SkipgramConfig {
        SkipgramConfig {
            dim: 8,
            negatives: 3,
            walks: WalkConfig {
                walks_per_node: 5,
                ..WalkConfig::default()
            },
            seed: 4,
            ..SkipgramConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_normalised() {
        let g = ring(12);
        let nodes: Vec<usize> = (0..12).collect();
        let a = train_skipgram_on(&g, &nodes, &small_cfg()).unwrap();
        let b = train_skipgram_on(&g, &nodes, &small_cfg()).unwrap();
        assert_eq!(a, b);
        for n in a.z.row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn online_round_freezes_old_rows() {
        let g = ring(12);
        let old: Vec<usize> = (0..10).collect();
        let base = train_skipgram_on(&g, &old, &small_cfg()).unwrap();
        let before = base.checksum(&old);

        let same = online_embed_new_nodes(&base, &g, &[], ContextMode::Unrestricted, &small_cfg()).unwrap();
        assert_eq!(same.embeddings.z, base.z);
        assert_eq!(same.steps, 0);

        for mode in [ContextMode::Restricted, ContextMode::Unrestricted] {
            let r = online_embed_new_nodes(&base, &g, &[10, 11], mode, &small_cfg()).unwrap();
            assert_eq!(r.embeddings.checksum(&old), before);
            assert!(r.steps >= 1);
            assert!(r.untouched.is_empty());
        }
    }

    #[test]
    fn new_node_moves_towards_its_neighbour() {
        // node 5 hangs off node 0 of a trained 5-ring
        let mut edges: Vec<(usize, usize)> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        edges.push((0, 5));
        let g = Graph::from_indices(6, &edges, Tensor::zeros(6, 1)).unwrap();
        let cfg = SkipgramConfig {
            epochs: 20,
            ..small_cfg()
        };
        let base = train_skipgram_on(&g, &(0..5).collect::<Vec<_>>(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = LookupEmbeddings::new(1, &cfg, &mut rng).z;
        let init_dot = dot(init.row(0), base.z.row(0)) / dot(init.row(0), init.row(0)).sqrt();
        let r = online_embed_new_nodes(&base, &g, &[5], ContextMode::Restricted, &cfg).unwrap();
        assert!(dot(r.embeddings.z.row(5), base.z.row(0)) > init_dot);
    }

    #[test]
    fn isolated_new_node_is_flagged() {
        let mut edges: Vec<(usize, usize)> = (0..4).map(|i| (i, (i + 1) % 4)).collect();
        edges.push((0, 2));
        let g = Graph::from_indices(5, &edges, Tensor::zeros(5, 1)).unwrap();
        let base = train_skipgram_on(&g, &[0, 1, 2, 3], &small_cfg()).unwrap();
        let r = online_embed_new_nodes(&base, &g, &[4], ContextMode::Unrestricted, &small_cfg()).unwrap();
        assert_eq!(r.untouched, vec![4]);
    }

    #[test]
    fn orthogonal_maps_leave_objective_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Tensor<f64> = Tensor::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let pairs = [(0, 1), (2, 3), (4, 5)];
        let negs = [1, 3, 5, 0];
        let j = |m: &Tensor<f64>| skipgram_objective(m, &pairs, &negs);
        assert_eq!(j(&z.matmul(&Tensor::identity(4)).unwrap()).unwrap(), j(&z).unwrap());
        let mut refl = Tensor::identity(4);
        refl.set(3, 3, -1.0);
        assert_eq!(j(&z.matmul(&refl).unwrap()).unwrap(), j(&z).unwrap());
        assert!(rotation_invariance_check(&z, j, 20, &mut rng).unwrap() < 1e-12);
    }
}
