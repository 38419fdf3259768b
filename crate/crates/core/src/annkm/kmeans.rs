//! k-means++ seeding and Lloyd iterations with exact or forest-backed
//! assignment.

use rayon::prelude::*;

use super::forest::{ForestParams, KdForest, DEFAULT_MAX_COMPARISONS, DEFAULT_TREES};
use crate::data::{squared_euclidean, Embedding};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Prng};

/// Above this many centers, ANN mode indexes the centers with a forest.
pub const ANN_CENTER_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KMeansMode {
    #[default]
    Exact,
    Ann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seeding {
    /// D² sampling.
    #[default]
    KMeansPlusPlus,
    /// Random first center, then repeatedly the point farthest from all
    /// chosen centers.
    FarthestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub tol: f64,
    pub mode: KMeansMode,
    pub seeding: Seeding,
    pub num_trees: usize,
    pub max_comparisons: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            mode: KMeansMode::Exact,
            seeding: Seeding::KMeansPlusPlus,
            num_trees: DEFAULT_TREES,
            max_comparisons: DEFAULT_MAX_COMPARISONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Embedding>,
    /// Center index per point.
    pub assignment: Vec<usize>,
    /// Squared error of `assignment` against the centers (kept in 64 bits
    /// during iteration and narrowed to 32 bits only in `centers`).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each assignment step.
    pub objective_trace: Vec<f64>,
}

fn check_points<V: AsRef<[f32]>>(points: &[V], k: usize) -> Result<usize> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let dim = points[0].as_ref().len();
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.as_ref().len(),
        });
    }
    Ok(dim)
}

fn sq_dist_f64(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Indices of k seed points: the first uniform, each further one drawn with
/// probability proportional to its squared distance to the nearest chosen
/// seed.
pub fn kmeanspp_seed<V: AsRef<[f32]>>(points: &[V], k: usize, seed: u64) -> Result<Vec<usize>> {
    seed_points(points, k, seed, Seeding::KMeansPlusPlus)
}

pub fn farthest_point_seed<V: AsRef<[f32]>>(points: &[V], k: usize, seed: u64) -> Result<Vec<usize>> {
    seed_points(points, k, seed, Seeding::FarthestPoint)
}

fn seed_points<V: AsRef<[f32]>>(points: &[V], k: usize, seed: u64, how: Seeding) -> Result<Vec<usize>> {
    check_points(points, k)?;
    let n = points.len();
    let mut rng = Prng::new(seed);
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.below(n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_euclidean(p.as_ref(), points[first].as_ref()))
        .collect();
    d2[first] = 0.0;
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            match how {
                Seeding::KMeansPlusPlus => {
                    let u = rng.next_f64() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    let mut last_positive = 0;
                    for (i, &w) in d2.iter().enumerate() {
                        if w > 0.0 {
                            last_positive = i;
                            acc += w;
                            if acc > u {
                                pick = Some(i);
                                break;
                            }
                        }
                    }
                    pick.unwrap_or(last_positive)
                }
                Seeding::FarthestPoint => {
                    let mut best = 0;
                    for (i, &w) in d2.iter().enumerate() {
                        if w > d2[best] {
                            best = i;
                        }
                    }
                    best
                }
            }
        } else {
            // every remaining point duplicates a chosen one
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.below(free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        let c = points[next].as_ref();
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                d2[i] = 0.0;
            } else {
                d2[i] = d2[i].min(squared_euclidean(p.as_ref(), c));
            }
        }
    }
    Ok(chosen)
}

fn assign<V: AsRef<[f32]> + Sync>(
    points: &[V],
    centers: &[Vec<f64>],
    params: &KMeansParams,
    iter_seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let use_forest = params.mode == KMeansMode::Ann && centers.len() > ANN_CENTER_THRESHOLD;
    if use_forest {
        let narrowed: Vec<Vec<f32>> = centers
            .iter()
            .map(|c| c.iter().map(|&v| v as f32).collect())
            .collect();
        let forest = KdForest::build(
            &narrowed,
            &ForestParams {
                num_trees: params.num_trees,
                max_comparisons: params.max_comparisons,
                seed: iter_seed,
            },
        )?;
        points
            .par_iter()
            .map(|p| {
                let nb = forest.nearest(p.as_ref())?;
                Ok((nb.index, sq_dist_f64(p.as_ref(), &centers[nb.index])))
            })
            .collect()
    } else {
        Ok(points
            .par_iter()
            .map(|p| {
                let p = p.as_ref();
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = sq_dist_f64(p, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect())
    }
}

/// Lloyd's algorithm from k-means++ (or farthest-point) seeds.
///
/// Iteration stops once the relative objective decrease is at most
/// `params.tol` or after `params.max_iters` assignment steps. The returned
/// centers are the ones the final assignment was computed against. A center
/// left without points is moved onto the point farthest from its own center.
pub fn ann_kmeans<V: AsRef<[f32]> + Sync>(
    points: &[V],
    k: usize,
    params: &KMeansParams,
    seed: u64,
) -> Result<KMeansResult> {
    let dim = check_points(points, k)?;
    if params.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    let seeds = seed_points(points, k, seed, params.seeding)?;
    let mut centers: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&i| points[i].as_ref().iter().map(|&v| v as f64).collect())
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut assigned;
    let mut iterations = 0;
    loop {
        iterations += 1;
        assigned = assign(points, &centers, params, derive_seed(seed, iterations as u64))?;
        let objective: f64 = assigned.iter().map(|a| a.1).sum();
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if prev - objective <= params.tol * prev {
                converged = true;
            }
        }
        trace.push(objective);
        if converged || iterations >= params.max_iters {
            break;
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assigned) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p.as_ref()).for_each(|(s, &x)| *s += x as f64);
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        for (c, sum) in sums.into_iter().enumerate() {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                centers[c] = sum.into_iter().map(|s| s / inv).collect();
            }
        }
        if !empty.is_empty() {
            let mut by_distance: Vec<usize> = (0..points.len()).collect();
            by_distance.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
            for (&c, &p) in empty.iter().zip(&by_distance) {
                centers[c] = points[p].as_ref().iter().map(|&v| v as f64).collect();
            }
        }
    }

    let objective = *trace.last().unwrap();
    Ok(KMeansResult {
        centers: centers
            .iter()
            .map(|c| Embedding::from_f64(c))
            .collect::<Result<_>>()?,
        assignment: assigned.into_iter().map(|a| a.0).collect(),
        objective,
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: &[f32], n: usize, spread: f64, rng: &mut Prng) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| center.iter().map(|&c| (c as f64 + spread * rng.normal()) as f32).collect())
            .collect()
    }

    #[test]
    fn invalid_k() {
        let pts = vec![vec![0.0f32]; 3];
        assert!(matches!(kmeanspp_seed(&pts, 4, 0), Err(Error::InvalidK { k: 4, n: 3 })));
        assert!(matches!(kmeanspp_seed(&pts, 0, 0), Err(Error::InvalidK { .. })));
        assert!(matches!(
            ann_kmeans(&pts, 5, &KMeansParams::default(), 0),
            Err(Error::InvalidK { .. })
        ));
    }

    #[test]
    fn k_equals_n_picks_everything() {
        let mut r = Prng::new(1);
        let pts = blob(&[0.0, 0.0, 0.0], 15, 1.0, &mut r);
        let mut s = kmeanspp_seed(&pts, 15, 4).unwrap();
        s.sort();
        assert_eq!(s, (0..15).collect::<Vec<_>>());
        // also with duplicates, where D² mass runs out
        let dup = vec![vec![2.0f32, 2.0]; 6];
        let mut s = kmeanspp_seed(&dup, 6, 4).unwrap();
        s.sort();
        assert_eq!(s, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn never_picks_a_duplicate_while_distinct_points_remain() {
        let mut pts = vec![vec![0.0f32, 0.0]; 10];
        pts.push(vec![3.0, 0.0]);
        pts.push(vec![0.0, 4.0]);
        for seed in 0..200 {
            let s = kmeanspp_seed(&pts, 3, seed).unwrap();
            let zeros = s.iter().filter(|&&i| i < 10).count();
            assert_eq!(zeros, 1, "seed {seed}: {s:?}");
        }
    }

    #[test]
    fn farthest_point_is_deterministic_after_first() {
        let pts = vec![vec![0.0f32], vec![1.0], vec![10.0]];
        for seed in 0..10 {
            let s = farthest_point_seed(&pts, 2, seed).unwrap();
            if s[0] == 2 {
                assert_eq!(s[1], 0);
            } else {
                assert_eq!(s[1], 2);
            }
        }
    }

    #[test]
    fn one_center_is_the_mean() {
        let mut r = Prng::new(9);
        let pts = blob(&[1.0, -2.0, 0.5], 40, 0.7, &mut r);
        let res = ann_kmeans(&pts, 1, &KMeansParams::default(), 3).unwrap();
        let mut mean = [0.0f64; 3];
        for p in &pts {
            for (m, &x) in mean.iter_mut().zip(p) {
                *m += x as f64 / 40.0;
            }
        }
        for (c, m) in res.centers[0].as_slice().iter().zip(&mean) {
            assert!((*c as f64 - m).abs() < 1e-6);
        }
        let sse: f64 = pts
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(&x, m)| (x as f64 - m).powi(2)).sum::<f64>())
            .sum();
        assert!((res.objective - sse).abs() < 1e-9 * sse.max(1.0));
        assert!(res.converged);
    }

    #[test]
    fn separated_blobs_recover_blob_means() {
        for seed in 0..10 {
            let mut r = Prng::new(seed);
            let a = blob(&[0.0, 0.0], 30, 0.3, &mut r);
            let b = blob(&[20.0, 20.0], 25, 0.3, &mut r);
            let pts: Vec<_> = a.iter().chain(&b).cloned().collect();
            let res = ann_kmeans(&pts, 2, &KMeansParams::default(), seed).unwrap();
            for group in [&a, &b] {
                let mut mean = [0.0f64; 2];
                for p in group.iter() {
                    mean[0] += p[0] as f64 / group.len() as f64;
                    mean[1] += p[1] as f64 / group.len() as f64;
                }
                let hit = res.centers.iter().any(|c| {
                    (c.as_slice()[0] as f64 - mean[0]).abs() < 1e-6 && (c.as_slice()[1] as f64 - mean[1]).abs() < 1e-6
                });
                assert!(hit, "seed {seed}");
            }
        }
    }

    #[test]
    fn ann_mode_with_many_centers_runs() {
        let mut r = Prng::new(2);
        let pts = blob(&[0.0; 4], 400, 1.0, &mut r);
        let p = KMeansParams { mode: KMeansMode::Ann, ..Default::default() };
        let res = ann_kmeans(&pts, 80, &p, 11).unwrap();
        assert_eq!(res.centers.len(), 80);
        assert_eq!(res.assignment.len(), 400);
        let again = ann_kmeans(&pts, 80, &p, 11).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn empty_cluster_reseeded() {
        // Two seeds land on duplicates of the same point only when forced by
        // the fallback; k=3 on 3 distinct + many duplicates still fills all.
        let mut pts = vec![vec![0.0f32]; 20];
        pts.push(vec![1.0]);
        pts.push(vec![100.0]);
        let res = ann_kmeans(&pts, 3, &KMeansParams::default(), 0).unwrap();
        let mut used = res.assignment.clone();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!(res.objective < 1e-9);
    }
}
