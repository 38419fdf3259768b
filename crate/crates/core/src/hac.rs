//! Hierarchical agglomerative clustering.
//!
//! Every item starts as its own cluster and the closest pair of clusters is
//! merged until the stopping rule holds. Inter-cluster distances are kept in
//! a condensed matrix and updated with the Lance-Williams recurrence; each
//! live row caches its nearest neighbour among higher slots, so a merge costs
//! a linear scan plus the rows whose cached neighbour was consumed.
//!
//! A cluster is identified during merging by its *slot*: the lowest input
//! position among its members. Equal-distance candidates (within
//! [`TIE_EPS`]) resolve to the lexicographically smallest `(slot_a, slot_b)`.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::data::{dot, squared_euclidean};
use crate::error::{Error, Result};

pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Linkage {
    Single,
    Complete,
    /// Unweighted pair-group average (UPGMA).
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    NumClusters(usize),
    /// Merge while the closest pair is at most this far apart.
    DistanceThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageSpec {
    pub linkage: Linkage,
    pub metric: Metric,
    pub stop: StopRule,
}

impl LinkageSpec {
    pub fn new(linkage: Linkage, metric: Metric, stop: StopRule) -> Self {
        Self {
            linkage,
            metric,
            stop,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self.stop {
            StopRule::NumClusters(k) if k == 0 || k > n => Err(Error::InvalidStop(format!(
                "cluster count {k} outside 1..={n}"
            ))),
            StopRule::DistanceThreshold(t) if t.is_nan() || t < 0.0 => {
                Err(Error::InvalidStop(format!("threshold {t} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// One agglomeration step between two cluster slots, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// A flat partition of items plus the merges that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    item_ids: Vec<u64>,
    labels: Vec<usize>,
    num_clusters: usize,
    merge_trace: Vec<Merge>,
}

impl Clustering {
    /// Cluster ids are relabeled densely in order of first appearance.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(item_ids: Vec<u64>, raw: &[L]) -> Result<Self> {
        if item_ids.len() != raw.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids but {} labels",
                item_ids.len(),
                raw.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(item_ids.len());
        if let Some(dup) = item_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidInput(format!("item {dup} labeled twice")));
        }
        let mut dense: HashMap<L, usize> = HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| {
                let next = dense.len();
                *dense.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self {
            item_ids,
            labels,
            num_clusters: dense.len(),
            merge_trace: Vec::new(),
        })
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Label of each item, aligned with [`Clustering::item_ids`].
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn merge_trace(&self) -> &[Merge] {
        &self.merge_trace
    }

    pub fn label_of(&self, item_id: u64) -> Option<usize> {
        self.item_ids
            .iter()
            .position(|&id| id == item_id)
            .map(|i| self.labels[i])
    }

    /// Member item ids per cluster id.
    pub fn clusters(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (&id, &l) in self.item_ids.iter().zip(&self.labels) {
            out[l].push(id);
        }
        out
    }

    /// Shifts every cluster id by `offset`, used when concatenating
    /// independently clustered subsets.
    pub(crate) fn offset_into(&self, offset: usize, ids: &mut Vec<u64>, labels: &mut Vec<usize>) {
        ids.extend_from_slice(&self.item_ids);
        labels.extend(self.labels.iter().map(|l| l + offset));
    }

    pub(crate) fn from_parts(item_ids: Vec<u64>, labels: Vec<usize>, num_clusters: usize) -> Self {
        Self {
            item_ids,
            labels,
            num_clusters,
            merge_trace: Vec::new(),
        }
    }

    /// `item_id,cluster_id` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["item_id", "cluster_id"])?;
        for (id, l) in self.item_ids.iter().zip(&self.labels) {
            w.write_record([id.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(r);
        let mut ids = Vec::new();
        let mut raw = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<u64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad clustering row {rec:?}")))
            };
            ids.push(parse(0)?);
            raw.push(parse(1)?);
        }
        Self::from_labels(ids, &raw)
    }

    /// `step,a,b,distance` rows; `a` and `b` are the item ids of the lowest
    /// input position in each merged cluster.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["step", "a", "b", "distance"])?;
        for (step, m) in self.merge_trace.iter().enumerate() {
            w.write_record([
                step.to_string(),
                self.item_ids[m.a].to_string(),
                self.item_ids[m.b].to_string(),
                m.distance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetric distance matrix with zero diagonal, stored as the strict upper
/// triangle.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let values = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i + 1..n).map(move |j| f(i, j))
            })
            .collect();
        Self { n, values }
    }

    pub fn from_points<V: AsRef<[f32]> + Sync>(points: &[V], metric: Metric) -> Result<Self> {
        let n = points.len();
        if let Some(first) = points.first() {
            let d = first.as_ref().len();
            if let Some(bad) = points.iter().find(|p| p.as_ref().len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: bad.as_ref().len(),
                });
            }
        }
        match metric {
            Metric::Euclidean => Ok(Self::from_fn(n, |i, j| {
                squared_euclidean(points[i].as_ref(), points[j].as_ref()).sqrt()
            })),
            Metric::Cosine => {
                let norms: Vec<f64> = points.iter().map(|p| dot(p.as_ref(), p.as_ref()).sqrt()).collect();
                if norms.contains(&0.0) {
                    return Err(Error::ZeroVector);
                }
                Ok(Self::from_fn(n, |i, j| {
                    let c = dot(points[i].as_ref(), points[j].as_ref()) / (norms[i] * norms[j]);
                    1.0 - c.clamp(-1.0, 1.0)
                }))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.values[self.index(i, j)],
            std::cmp::Ordering::Greater => self.values[self.index(j, i)],
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = if i < j { self.index(i, j) } else { self.index(j, i) };
        self.values[idx] = v;
    }
}

/// Clusters `points` (aligned with `ids`) under `spec`.
pub fn hac_cluster<V: AsRef<[f32]> + Sync>(
    ids: &[u64],
    points: &[V],
    spec: &LinkageSpec,
) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if ids.len() != points.len() {
        return Err(Error::InvalidInput(format!(
            "{} ids for {} points",
            ids.len(),
            points.len()
        )));
    }
    spec.validate(points.len())?;
    let matrix = DistanceMatrix::from_points(points, spec.metric)?;
    hac_cluster_matrix(ids, matrix, spec.linkage, spec.stop)
}

/// Clusters from a precomputed distance matrix under an arbitrary metric.
pub fn hac_cluster_matrix(
    ids: &[u64],
    mut dist: DistanceMatrix,
    linkage: Linkage,
    stop: StopRule,
) -> Result<Clustering> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if ids.len() != n {
        return Err(Error::InvalidInput(format!("{} ids for {n} items", ids.len())));
    }
    LinkageSpec::new(linkage, Metric::Euclidean, stop).validate(n)?;

    let max_merges = match stop {
        StopRule::NumClusters(k) => n - k,
        StopRule::DistanceThreshold(_) => n - 1,
    };

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let refresh = |row: usize, active: &[bool], dist: &DistanceMatrix, nn: &mut [usize], nn_dist: &mut [f64]| {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in row + 1..n {
            if active[j] {
                let d = dist.get(row, j);
                if best == usize::MAX || d < best_d - TIE_EPS {
                    best = j;
                    best_d = d;
                }
            }
        }
        nn[row] = best;
        nn_dist[row] = best_d;
    };

    for i in 0..n {
        refresh(i, &active, &dist, &mut nn, &mut nn_dist);
    }

    let mut trace = Vec::with_capacity(max_merges);
    for _ in 0..max_merges {
        let mut a = usize::MAX;
        let mut d = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nn_dist[i] < d - TIE_EPS) {
                a = i;
                d = nn_dist[i];
            }
        }
        if a == usize::MAX {
            break;
        }
        if let StopRule::DistanceThreshold(t) = stop {
            if d > t {
                break;
            }
        }
        let b = nn[a];
        trace.push(Merge { a, b, distance: d });

        let (sa, sb) = (size[a], size[b]);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (x, y) = (dist.get(a, k), dist.get(b, k));
            let merged = match linkage {
                Linkage::Single => x.min(y),
                Linkage::Complete => x.max(y),
                Linkage::Average => {
                    // Written as low + weight * gap so the result never drops
                    // below min(x, y) under rounding.
                    let (lo, hi, w_hi) = if x <= y {
                        (x, y, sb as f64 / (sa + sb) as f64)
                    } else {
                        (y, x, sa as f64 / (sa + sb) as f64)
                    };
                    lo + (hi - lo) * w_hi
                }
            };
            dist.set(a, k, merged);
        }
        size[a] += sb;
        active[b] = false;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);

        for k in 0..b {
            if !active[k] {
                continue;
            }
            if k == a || nn[k] == a || nn[k] == b {
                refresh(k, &active, &dist, &mut nn, &mut nn_dist);
            } else if k < a {
                let dk = dist.get(k, a);
                if dk < nn_dist[k] - TIE_EPS || (dk <= nn_dist[k] + TIE_EPS && a < nn[k]) {
                    nn[k] = a;
                    nn_dist[k] = dk;
                }
            }
        }
    }

    let mut slot_of = vec![0usize; n];
    for (slot, m) in members.iter().enumerate() {
        for &item in m {
            slot_of[item] = slot;
        }
    }
    let mut clustering = Clustering::from_labels(ids.to_vec(), &slot_of)?;
    clustering.merge_trace = trace;
    Ok(clustering)
}

/// Sum over clusters of squared Euclidean distances to the cluster centroid.
pub fn squared_error<V: AsRef<[f32]>>(points: &[V], clustering: &Clustering) -> Result<f64> {
    if points.len() != clustering.labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points for {} labels",
            points.len(),
            clustering.labels.len()
        )));
    }
    let Some(first) = points.first() else {
        return Ok(0.0);
    };
    let dim = first.as_ref().len();
    let k = clustering.num_clusters;
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(&clustering.labels) {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, &x)| *s += x as f64);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    Ok(points
        .iter()
        .zip(&clustering.labels)
        .map(|(p, &l)| {
            p.as_ref()
                .iter()
                .zip(&sums[l])
                .map(|(&x, c)| (x as f64 - c).powi(2))
                .sum::<f64>()
        })
        .sum())
}
