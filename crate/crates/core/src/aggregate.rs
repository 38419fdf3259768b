//! Template aggregation: plain feature averaging and cluster-center
//! aggregation, plus the harness that sweeps the cluster count.

use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::annkm::{ann_kmeans, KMeansParams};
use crate::data::{mean_f64, AttributeRecord, Embedding, SubjectId, Template, TemplateId};
use crate::error::{Error, Result};
use crate::metrics::{IdentReport, REPORT_COLUMNS};
use crate::rng::derive_seed;

pub const DEFAULT_K_MAX_SWEEP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMethod {
    Mean,
    /// k cluster centers, clipped to the number of features.
    Cluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationSpec {
    pub method: AggregationMethod,
    pub k_max_sweep: usize,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self {
            method: AggregationMethod::Mean,
            k_max_sweep: DEFAULT_K_MAX_SWEEP,
        }
    }
}

pub fn mean_aggregate(features: &[Embedding]) -> Result<Embedding> {
    let first = features.first().ok_or(Error::EmptySet)?;
    Embedding::from_f64(&mean_f64(features.iter().map(Embedding::as_slice), first.dim())?)
}

/// Centers of k-means over `features` with `k' = min(k, features.len())`.
pub fn cluster_aggregate(
    features: &[Embedding],
    k: usize,
    params: &KMeansParams,
    seed: u64,
) -> Result<Vec<Embedding>> {
    if features.is_empty() {
        return Err(Error::EmptySet);
    }
    if k == 0 {
        return Err(Error::InvalidK { k, n: features.len() });
    }
    let k = k.min(features.len());
    Ok(ann_kmeans(features, k, params, seed)?.centers)
}

/// Features attached to one probe template, e.g. the frames associated with
/// a tracked subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFeatures {
    pub template_id: TemplateId,
    pub subject_id: Option<SubjectId>,
    pub features: Vec<Embedding>,
}

/// Aggregates one probe. Each probe's k-means stream is seeded from `seed`
/// and its template id, so results do not depend on probe order.
pub fn aggregate_probe(
    probe: &ProbeFeatures,
    method: AggregationMethod,
    params: &KMeansParams,
    seed: u64,
) -> Result<Template> {
    let reps = match method {
        AggregationMethod::Mean => vec![mean_aggregate(&probe.features)?],
        AggregationMethod::Cluster(k) => {
            cluster_aggregate(&probe.features, k, params, derive_seed(seed, probe.template_id))?
        }
    };
    Template::new(probe.template_id, probe.subject_id, AttributeRecord::unknown(), reps)
}

pub fn aggregate_probes(
    probes: &[ProbeFeatures],
    method: AggregationMethod,
    params: &KMeansParams,
    seed: u64,
) -> Result<Vec<Template>> {
    probes
        .par_iter()
        .map(|p| aggregate_probe(p, method, params, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub per_gallery: Vec<IdentReport>,
    pub average: IdentReport,
}

/// Aggregates every probe with each k in `ks` and scores the result.
/// `scorer` returns one report per gallery.
pub fn sweep_k<F>(
    probes: &[ProbeFeatures],
    ks: RangeInclusive<usize>,
    params: &KMeansParams,
    seed: u64,
    scorer: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(&[Template]) -> Result<Vec<IdentReport>>,
{
    if *ks.start() == 0 || ks.is_empty() {
        return Err(Error::InvalidParameter(format!("bad k range {ks:?}")));
    }
    ks.map(|k| {
        let templates = aggregate_probes(probes, AggregationMethod::Cluster(k), params, seed)?;
        let per_gallery = scorer(&templates)?;
        let average = IdentReport::average(&per_gallery)?;
        Ok(SweepRow {
            k,
            per_gallery,
            average,
        })
    })
    .collect()
}

/// Which report of each sweep row to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepColumn {
    Gallery(usize),
    Average,
}

/// `k,rank1,rank5,rank10,rank25,rank50,tpir_fpir_0.1,tpir_fpir_0.01` rows.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], which: SweepColumn, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["k"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header)?;
    for row in rows {
        let report = match which {
            SweepColumn::Average => &row.average,
            SweepColumn::Gallery(g) => row
                .per_gallery
                .get(g)
                .ok_or_else(|| Error::InvalidParameter(format!("no gallery {g}")))?,
        };
        let mut rec = vec![row.k.to_string()];
        rec.extend(report.cells());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mean_cases() {
        let v = emb(&[0.5, -1.0]);
        assert_eq!(mean_aggregate(std::slice::from_ref(&v)).unwrap(), v);
        assert_eq!(
            mean_aggregate(&[emb(&[0.0, 0.0]), emb(&[2.0, 2.0])]).unwrap(),
            emb(&[1.0, 1.0])
        );
        assert!(matches!(mean_aggregate(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn mean_is_order_invariant() {
        let mut r = Prng::new(4);
        let mut fs: Vec<Embedding> = (0..9)
            .map(|_| Embedding::new((0..5).map(|_| r.normal() as f32).collect()).unwrap())
            .collect();
        let a = mean_aggregate(&fs).unwrap();
        fs.reverse();
        let b = mean_aggregate(&fs).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn clipping() {
        let fs = [emb(&[0.0, 1.0]), emb(&[1.0, 0.0]), emb(&[1.0, 1.0])];
        let reps = cluster_aggregate(&fs, 7, &KMeansParams::default(), 1).unwrap();
        assert_eq!(reps.len(), 3);
        assert!(matches!(
            cluster_aggregate(&[], 2, &KMeansParams::default(), 1),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn single_cluster_equals_mean() {
        let mut r = Prng::new(8);
        let fs: Vec<Embedding> = (0..17)
            .map(|_| Embedding::new((0..6).map(|_| r.normal() as f32).collect()).unwrap())
            .collect();
        let reps = cluster_aggregate(&fs, 1, &KMeansParams::default(), 5).unwrap();
        let mean = mean_aggregate(&fs).unwrap();
        for (x, y) in reps[0].as_slice().iter().zip(mean.as_slice()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn two_blobs_give_blob_means() {
        let mut r = Prng::new(12);
        let a: Vec<Embedding> = (0..10)
            .map(|_| emb(&[(5.0 + 0.1 * r.normal()) as f32, (0.1 * r.normal()) as f32]))
            .collect();
        let b: Vec<Embedding> = (0..6)
            .map(|_| emb(&[(0.1 * r.normal()) as f32, (-5.0 + 0.1 * r.normal()) as f32]))
            .collect();
        let all: Vec<Embedding> = a.iter().chain(&b).cloned().collect();
        let reps = cluster_aggregate(&all, 2, &KMeansParams::default(), 3).unwrap();
        for group in [&a, &b] {
            let m = mean_aggregate(group).unwrap();
            assert!(reps.iter().any(|c| c
                .as_slice()
                .iter()
                .zip(m.as_slice())
                .all(|(x, y)| (x - y).abs() < 1e-6)));
        }
    }
}
