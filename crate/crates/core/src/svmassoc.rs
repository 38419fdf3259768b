//! Target-face association: a class-weighted squared-hinge linear SVM solved
//! in the primal, box overlap pre-association and the iterative positive-set
//! growth loop.

use std::collections::BTreeSet;

use crate::data::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// Weight on the positive-class loss.
    pub cp: f64,
    /// Weight on the negative-class loss.
    pub cn: f64,
    /// Append a constant 1 feature so the (regularized) last weight acts as
    /// a bias.
    pub bias: bool,
    /// Stop once the gradient norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            cp: 1.0,
            cn: 1.0,
            bias: true,
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

/// `0.5 w.w + Cp sum_pos max(0, 1 - w.x)^2 + Cn sum_neg max(0, 1 + w.x)^2`
/// over the (optionally bias-augmented) training rows.
#[derive(Debug, Clone)]
pub struct SvmProblem {
    dim: usize,
    rows: Vec<f64>,
    labels: Vec<f64>,
    costs: Vec<f64>,
}

impl SvmProblem {
    pub fn new<V: AsRef<[f32]>>(positives: &[V], negatives: &[V], params: &SvmParams) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::EmptyClass("positive"));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyClass("negative"));
        }
        for (name, c) in [("cp", params.cp), ("cn", params.cn)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {c}")));
            }
        }
        let base = positives[0].as_ref().len();
        let dim = base + params.bias as usize;
        let n = positives.len() + negatives.len();
        let mut rows = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        let all = positives
            .iter()
            .map(|x| (x, 1.0, params.cp))
            .chain(negatives.iter().map(|x| (x, -1.0, params.cn)));
        for (index, (x, y, c)) in all.enumerate() {
            let x = x.as_ref();
            if x.len() != base {
                return Err(Error::DimensionMismatch {
                    expected: base,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadFeature { index });
            }
            rows.extend(x.iter().map(|&v| v as f64));
            if params.bias {
                rows.push(1.0);
            }
            labels.push(y);
            costs.push(c);
        }
        Ok(Self {
            dim,
            rows,
            labels,
            costs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn margins(&self, w: &[f64]) -> Vec<f64> {
        (0..self.labels.len())
            .map(|i| 1.0 - self.labels[i] * dot(self.row(i), w))
            .collect()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let reg = 0.5 * dot(w, w);
        let loss: f64 = self
            .margins(w)
            .iter()
            .zip(&self.costs)
            .map(|(&m, c)| if m > 0.0 { c * m * m } else { 0.0 })
            .sum();
        reg + loss
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = w.to_vec();
        for (i, m) in self.margins(w).into_iter().enumerate() {
            if m > 0.0 {
                let s = -2.0 * self.costs[i] * m * self.labels[i];
                axpy(s, self.row(i), &mut g);
            }
        }
        g
    }

    /// Generalized Hessian `I + 2 sum_active C x x^T` applied to `v`.
    fn hessian_times(&self, active: &[usize], v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for &i in active {
            let x = self.row(i);
            axpy(2.0 * self.costs[i] * dot(x, v), x, &mut out);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Weights; the last entry is the bias when `bias` is set.
    pub w: Vec<f64>,
    pub bias: bool,
    pub cp: f64,
    pub cn: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, x: &[f32]) -> f64 {
        let base = self.w.len() - self.bias as usize;
        let mut s: f64 = x.iter().zip(&self.w[..base]).map(|(&a, b)| a as f64 * b).sum();
        if self.bias {
            s += self.w[base];
        }
        s
    }
}

/// Minimizes the squared-hinge objective with a semismooth Newton method:
/// conjugate-gradient steps on the generalized Hessian and Armijo
/// backtracking, starting from `w = 0`.
pub fn train_svm<V: AsRef<[f32]>>(positives: &[V], negatives: &[V], params: &SvmParams) -> Result<SvmModel> {
    let problem = SvmProblem::new(positives, negatives, params)?;
    let mut w = vec![0.0; problem.dim];
    let mut f = problem.objective(&w);
    let mut iterations = 0;
    let mut g = problem.gradient(&w);
    let mut gnorm = dot(&g, &g).sqrt();
    while gnorm > params.tol && iterations < params.max_iters {
        iterations += 1;
        let margins = problem.margins(&w);
        let active: Vec<usize> = (0..margins.len()).filter(|&i| margins[i] > 0.0).collect();
        let step = conjugate_gradient(&problem, &active, &g, (0.1f64).min(gnorm) * gnorm);
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = w.clone();
            axpy(t, &step, &mut trial);
            let ft = problem.objective(&trial);
            if ft <= f + 1e-4 * t * slope {
                w = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        g = problem.gradient(&w);
        gnorm = dot(&g, &g).sqrt();
    }
    Ok(SvmModel {
        w,
        bias: params.bias,
        cp: params.cp,
        cn: params.cn,
        objective: f,
        gradient_norm: gnorm,
        iterations,
    })
}

/// Solves `H d = -g` to residual `tol`.
fn conjugate_gradient(problem: &SvmProblem, active: &[usize], g: &[f64], tol: f64) -> Vec<f64> {
    let n = g.len();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..(2 * n).max(10) {
        if rr.sqrt() <= tol {
            break;
        }
        let hp = problem.hessian_times(active, &p);
        let alpha = rr / dot(&p, &hp);
        axpy(alpha, &p, &mut d);
        axpy(-alpha, &hp, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_next;
    }
    d
}

// ---------------------------------------------------------------------------
// Boxes

/// Axis-aligned box with top-left corner `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid box ({x}, {y}, {w}, {h})")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionRef {
    pub frame: usize,
    pub detection: usize,
}

/// For each of the first `first_k` frames, the detection overlapping the
/// track box most (ties to the lower index); frames with no overlap are
/// skipped.
pub fn pre_associate(tracks: &[BBox], detections: &[Vec<BBox>], first_k: usize) -> Vec<DetectionRef> {
    tracks
        .iter()
        .zip(detections)
        .take(first_k)
        .enumerate()
        .filter_map(|(frame, (track, dets))| {
            let mut best: Option<(usize, f64)> = None;
            for (i, d) in dets.iter().enumerate() {
                let o = iou(track, d);
                if o > 0.0 && best.is_none_or(|b| o > b.1) {
                    best = Some((i, o));
                }
            }
            best.map(|(detection, _)| DetectionRef { frame, detection })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Association loop

/// Which negatives train the target model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativePolicy {
    /// Within-video and background negatives together.
    #[default]
    Union,
    /// Background negatives only when the video supplies none.
    BackgroundFallback,
}

/// Sample indices into a shared feature table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationSets {
    pub positives: Vec<usize>,
    pub within_video_negatives: Vec<usize>,
    pub background: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocParams {
    pub rounds: usize,
    pub svm: SvmParams,
    /// Candidates with decision value above this join the positives.
    pub accept_margin: f64,
    pub policy: NegativePolicy,
}

impl Default for AssocParams {
    fn default() -> Self {
        Self {
            rounds: 5,
            svm: SvmParams::default(),
            accept_margin: 0.0,
            policy: NegativePolicy::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Final positive set, ascending.
    pub positives: Vec<usize>,
    /// Positive-set size after each round.
    pub sizes: Vec<usize>,
    pub rounds_run: usize,
}

pub fn tfa_associate(
    features: &[Embedding],
    sets: &AssociationSets,
    candidates: &[usize],
    params: &AssocParams,
) -> Result<AssociationResult> {
    if sets.positives.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    let all_ids = sets
        .positives
        .iter()
        .chain(&sets.within_video_negatives)
        .chain(&sets.background)
        .chain(candidates);
    if let Some(&bad) = all_ids.clone().find(|&&i| i >= features.len()) {
        return Err(Error::InvalidInput(format!("sample {bad} outside feature table")));
    }
    let mut seen = BTreeSet::new();
    for &i in sets
        .positives
        .iter()
        .chain(&sets.within_video_negatives)
        .chain(&sets.background)
    {
        if !seen.insert(i) {
            return Err(Error::OverlappingSets(i));
        }
    }

    let negatives: Vec<usize> = match params.policy {
        NegativePolicy::Union => sets
            .within_video_negatives
            .iter()
            .chain(&sets.background)
            .copied()
            .collect(),
        NegativePolicy::BackgroundFallback if sets.within_video_negatives.is_empty() => sets.background.clone(),
        NegativePolicy::BackgroundFallback => sets.within_video_negatives.clone(),
    };
    let negative_rows: Vec<&[f32]> = negatives.iter().map(|&i| features[i].as_slice()).collect();

    let mut positives: BTreeSet<usize> = sets.positives.iter().copied().collect();
    let pool: Vec<usize> = candidates.iter().copied().filter(|i| !seen.contains(i)).collect();
    let mut sizes = Vec::new();
    let mut rounds_run = 0;
    for _ in 0..params.rounds {
        let remaining: Vec<usize> = pool.iter().copied().filter(|i| !positives.contains(i)).collect();
        if remaining.is_empty() {
            break;
        }
        rounds_run += 1;
        let pos_rows: Vec<&[f32]> = positives.iter().map(|&i| features[i].as_slice()).collect();
        let model = train_svm(&pos_rows, &negative_rows, &params.svm)?;
        let accepted: Vec<usize> = remaining
            .into_iter()
            .filter(|&i| model.decision(features[i].as_slice()) > params.accept_margin)
            .collect();
        let grew = !accepted.is_empty();
        positives.extend(accepted);
        sizes.push(positives.len());
        if !grew {
            break;
        }
    }
    Ok(AssociationResult {
        positives: positives.into_iter().collect(),
        sizes,
        rounds_run,
    })
}
