//! Randomized k-d tree forest with budgeted best-bin-first search.
//!
//! Each tree splits a node on a dimension drawn uniformly from the (up to)
//! five highest-variance dimensions of the node's points, at the median
//! coordinate: points strictly below the split value go left, the rest go
//! right. Nodes whose top dimensions all have zero variance become leaves.
//!
//! A query descends every tree once, then keeps popping the unexplored branch
//! with the smallest lower bound from a single queue shared by all trees,
//! until `max_comparisons` distinct points have been distance-evaluated or no
//! branch can still contain a closer point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::data::squared_euclidean;
use crate::error::{Error, Result};
use crate::rng::Prng;

pub const DEFAULT_TREES: usize = 2;
pub const DEFAULT_MAX_COMPARISONS: usize = 100;
const SPLIT_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_comparisons: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: DEFAULT_TREES,
            max_comparisons: DEFAULT_MAX_COMPARISONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        dim: u32,
        value: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    /// Point indices, each leaf owning a contiguous range.
    order: Vec<u32>,
}

/// Nearest point found by a search: index into the indexed points and
/// squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdForest {
    dim: usize,
    points: Vec<f32>,
    trees: Vec<Tree>,
    max_comparisons: usize,
    seed: u64,
}

struct Builder<'a> {
    points: &'a [f32],
    dim: usize,
    rng: Prng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn point(&self, i: u32) -> &[f32] {
        let i = i as usize;
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Builds the subtree over `idx`, which occupies `order[offset..]`.
    fn build(&mut self, idx: &mut [u32], offset: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + idx.len()) as u32,
        });
        if idx.len() <= 1 {
            return id;
        }
        let Some(dim) = self.choose_dim(idx) else {
            return id;
        };
        let mut coords: Vec<f32> = idx.iter().map(|&i| self.point(i)[dim]).collect();
        coords.sort_by(f32::total_cmp);
        let mut value = coords[coords.len() / 2];
        if value <= coords[0] {
            // median equals the minimum: split just above it instead
            value = *coords.iter().find(|&&c| c > coords[0]).expect("positive variance");
        }
        let (left, right): (Vec<u32>, Vec<u32>) =
            idx.iter().partition(|&&i| self.point(i)[dim] < value);
        let split = left.len();
        idx[..split].copy_from_slice(&left);
        idx[split..].copy_from_slice(&right);
        drop((left, right));
        let (lo, hi) = idx.split_at_mut(split);
        let l = self.build(lo, offset);
        let r = self.build(hi, offset + split);
        self.nodes[id as usize] = Node::Split {
            dim: dim as u32,
            value,
            left: l,
            right: r,
        };
        id
    }

    fn choose_dim(&mut self, idx: &[u32]) -> Option<usize> {
        let n = idx.len() as f64;
        let mut mean = vec![0.0f64; self.dim];
        for &i in idx {
            for (m, &x) in mean.iter_mut().zip(self.point(i)) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; self.dim];
        for &i in idx {
            for ((v, &x), m) in var.iter_mut().zip(self.point(i)).zip(&mean) {
                let d = x as f64 - m;
                *v += d * d;
            }
        }
        let mut dims: Vec<usize> = (0..self.dim).collect();
        dims.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
        let candidates: Vec<usize> = dims
            .into_iter()
            .take(SPLIT_CANDIDATES)
            .filter(|&d| {
                // variance can be a rounding artefact; require two distinct values
                let first = self.point(idx[0])[d];
                var[d] > 0.0 && idx.iter().any(|&i| self.point(i)[d] != first)
            })
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[self.rng.below(candidates.len())])
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    bound: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Branch {}
impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Branch {
    // reversed so BinaryHeap pops the smallest bound first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

struct Search<'a> {
    forest: &'a KdForest,
    query: &'a [f32],
    budget: usize,
    checks: usize,
    visited: Vec<u64>,
    heap: BinaryHeap<Branch>,
    best: Neighbor,
}

impl Search<'_> {
    fn descend(&mut self, tree: usize, mut node: u32, bound: f64) {
        let t = &self.forest.trees[tree];
        loop {
            match t.nodes[node as usize] {
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = self.query[dim as usize] as f64 - value as f64;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    let far_bound = bound.max(diff * diff);
                    if far_bound <= self.best.distance {
                        self.heap.push(Branch {
                            bound: far_bound,
                            tree: tree as u32,
                            node: far,
                        });
                    }
                    node = near;
                }
                Node::Leaf { start, end } => {
                    for &p in &t.order[start as usize..end as usize] {
                        if self.checks >= self.budget {
                            return;
                        }
                        let p = p as usize;
                        let (word, bit) = (p / 64, 1u64 << (p % 64));
                        if self.visited[word] & bit != 0 {
                            continue;
                        }
                        self.visited[word] |= bit;
                        self.checks += 1;
                        let d = squared_euclidean(self.query, self.forest.point(p));
                        if d < self.best.distance || (d == self.best.distance && p < self.best.index) {
                            self.best = Neighbor { index: p, distance: d };
                        }
                    }
                    return;
                }
            }
        }
    }
}

impl KdForest {
    pub fn build<V: AsRef<[f32]>>(points: &[V], params: &ForestParams) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::EmptyVector);
        }
        if params.num_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        let n = points.len();
        let trees = (0..params.num_trees)
            .map(|t| {
                let mut b = Builder {
                    points: &flat,
                    dim,
                    rng: Prng::derive(params.seed, t as u64),
                    nodes: Vec::new(),
                };
                let mut order: Vec<u32> = (0..n as u32).collect();
                b.build(&mut order, 0);
                Tree {
                    nodes: b.nodes,
                    order,
                }
            })
            .collect();
        Ok(Self {
            dim,
            points: flat,
            trees,
            max_comparisons: params.max_comparisons,
            seed: params.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_comparisons(&self) -> usize {
        self.max_comparisons
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Search with the forest's own comparison budget.
    pub fn nearest(&self, query: &[f32]) -> Result<Neighbor> {
        self.search(query, self.max_comparisons)
    }

    /// Best of at most `max_comparisons` evaluated points; exact whenever the
    /// budget covers every point. Ties go to the lower index.
    pub fn search(&self, query: &[f32], max_comparisons: usize) -> Result<Neighbor> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if max_comparisons == 0 {
            return Err(Error::InvalidParameter("comparison budget must be >= 1".into()));
        }
        let mut s = Search {
            forest: self,
            query,
            budget: max_comparisons,
            checks: 0,
            visited: vec![0u64; self.len().div_ceil(64)],
            heap: BinaryHeap::new(),
            best: Neighbor {
                index: usize::MAX,
                distance: f64::INFINITY,
            },
        };
        for t in 0..self.trees.len() {
            s.descend(t, 0, 0.0);
        }
        while let Some(b) = s.heap.pop() {
            if s.checks >= s.budget || b.bound > s.best.distance {
                break;
            }
            s.descend(b.tree as usize, b.node, b.bound);
        }
        Ok(s.best)
    }

    /// Leaf ranges visited by a plain root-to-leaf descent in each tree;
    /// exposes tree structure for determinism checks.
    pub fn descent_signature(&self, query: &[f32]) -> Vec<(u32, u32)> {
        self.trees
            .iter()
            .map(|t| {
                let mut node = 0usize;
                loop {
                    match t.nodes[node] {
                        Node::Split {
                            dim,
                            value,
                            left,
                            right,
                        } => {
                            node = if query[dim as usize] < value { left } else { right } as usize;
                        }
                        Node::Leaf { start, end } => break (start, end),
                    }
                }
            })
            .collect()
    }
}

/// Exhaustive nearest neighbour; ties go to the lower index.
pub fn brute_force_nearest<V: AsRef<[f32]>>(points: &[V], query: &[f32]) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for (i, p) in points.iter().enumerate() {
        let d = squared_euclidean(query, p.as_ref());
        if best.is_none_or(|b| d < b.distance) {
            best = Some(Neighbor { index: i, distance: d });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut r = Prng::new(seed);
        (0..n).map(|_| (0..d).map(|_| r.normal() as f32).collect()).collect()
    }

    #[test]
    fn single_point_forest() {
        let f = KdForest::build(&[vec![1.0f32, 2.0]], &ForestParams::default()).unwrap();
        for q in [[0.0f32, 0.0], [100.0, -3.0]] {
            assert_eq!(f.search(&q, 1).unwrap().index, 0);
        }
    }

    #[test]
    fn empty_and_bad_input() {
        let empty: Vec<Vec<f32>> = vec![];
        assert!(matches!(KdForest::build(&empty, &ForestParams::default()), Err(Error::EmptyInput)));
        let f = KdForest::build(&random_points(5, 3, 1), &ForestParams::default()).unwrap();
        assert!(f.search(&[0.0, 0.0], 10).is_err());
        assert!(f.search(&[0.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn same_seed_same_trees() {
        let pts = random_points(200, 8, 5);
        let p = ForestParams { seed: 99, ..Default::default() };
        let a = KdForest::build(&pts, &p).unwrap();
        let b = KdForest::build(&pts, &p).unwrap();
        assert_eq!(a, b);
        for q in random_points(20, 8, 6) {
            assert_eq!(a.descent_signature(&q), b.descent_signature(&q));
            assert_eq!(a.search(&q, 10).unwrap(), b.search(&q, 10).unwrap());
        }
        let c = KdForest::build(&pts, &ForestParams { seed: 100, ..Default::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn indexed_point_found_with_budget_one() {
        for seed in 0..50 {
            let pts = random_points(60, 6, seed);
            let f = KdForest::build(&pts, &ForestParams { seed, ..Default::default() }).unwrap();
            for (i, p) in pts.iter().enumerate() {
                let nb = f.search(p, 1).unwrap();
                assert_eq!((nb.index, nb.distance), (i, 0.0));
            }
        }
    }

    #[test]
    fn full_budget_is_exact() {
        for seed in 0..20 {
            let pts = random_points(100, 5, seed);
            let f = KdForest::build(&pts, &ForestParams { seed, ..Default::default() }).unwrap();
            for q in random_points(30, 5, seed + 1000) {
                assert_eq!(f.search(&q, 100).unwrap(), brute_force_nearest(&pts, &q).unwrap());
            }
        }
    }

    #[test]
    fn duplicates_and_ties() {
        let pts = vec![vec![1.0f32, 1.0]; 7];
        let f = KdForest::build(&pts, &ForestParams::default()).unwrap();
        let nb = f.search(&[0.0, 0.0], 7).unwrap();
        assert_eq!(nb.index, 0);
        let nb = f.search(&[1.0, 1.0], 1).unwrap();
        assert_eq!(nb.distance, 0.0);
    }

    #[test]
    fn low_dimensional_skewed_median() {
        // many equal coordinates force the split-above-minimum path
        let mut pts: Vec<Vec<f32>> = (0..30).map(|_| vec![0.0f32]).collect();
        pts.push(vec![5.0]);
        pts.push(vec![6.0]);
        let f = KdForest::build(&pts, &ForestParams::default()).unwrap();
        assert_eq!(f.search(&[5.9], 40).unwrap().index, 31);
        assert_eq!(f.search(&[5.0], 1).unwrap().index, 30);
    }
}
