//! Attribute-based partitioning of templates and per-partition clustering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::data::{Gender, Template};
use crate::error::{Error, Result};
use crate::hac::{hac_cluster, Clustering, Linkage, LinkageSpec, Metric, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttributeKey {
    Gender,
    SkinTone,
}

impl FromStr for AttributeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gender" => Ok(AttributeKey::Gender),
            "skin_tone" | "skin" => Ok(AttributeKey::SkinTone),
            other => Err(Error::InvalidConfig(format!("unknown attribute {other:?}"))),
        }
    }
}

/// Ordered list of distinct attribute keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionScheme {
    keys: Vec<AttributeKey>,
}

impl PartitionScheme {
    pub fn new(keys: Vec<AttributeKey>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::InvalidConfig("partition scheme needs a key".into()));
        }
        let unique: BTreeSet<_> = keys.iter().collect();
        if unique.len() != keys.len() {
            return Err(Error::InvalidConfig("partition keys repeat".into()));
        }
        Ok(Self { keys })
    }

    pub fn keys(&self) -> &[AttributeKey] {
        &self.keys
    }
}

/// Parses a comma list such as `gender,skin_tone`.
impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let keys = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(keys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttributeValue {
    Gender(Gender),
    SkinTone(u8),
}

/// Attribute values identifying one partition, in scheme key order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionLabel(pub Vec<AttributeValue>);

impl fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            match v {
                AttributeValue::Gender(g) => write!(f, "{g}")?,
                AttributeValue::SkinTone(t) => write!(f, "skin{t}")?,
            }
        }
        Ok(())
    }
}

/// Template indices per partition plus the indices skipped for an unknown
/// attribute value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partitioning {
    pub subsets: BTreeMap<PartitionLabel, Vec<usize>>,
    pub skipped: Vec<usize>,
}

pub fn partition_templates(templates: &[Template], scheme: &PartitionScheme) -> Partitioning {
    let mut out = Partitioning::default();
    'items: for (i, t) in templates.iter().enumerate() {
        let mut label = Vec::with_capacity(scheme.keys.len());
        for key in &scheme.keys {
            let value = match key {
                AttributeKey::Gender => {
                    t.attributes.gender.is_known().then_some(AttributeValue::Gender(t.attributes.gender))
                }
                AttributeKey::SkinTone => t.attributes.skin_tone.map(AttributeValue::SkinTone),
            };
            match value {
                Some(v) => label.push(v),
                None => {
                    out.skipped.push(i);
                    continue 'items;
                }
            }
        }
        out.subsets.entry(PartitionLabel(label)).or_default().push(i);
    }
    out
}

/// How many clusters each subset receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KPolicy {
    /// Number of distinct known subject ids in the subset.
    GroundTruth,
    /// A global count split by subset size (largest remainder).
    Proportional(usize),
    /// No count; every subset merges up to the distance threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedClustering {
    /// Per-subset clusterings keyed by label; item ids are template ids.
    pub per_partition: BTreeMap<PartitionLabel, Clustering>,
    /// Union of all subsets with cluster ids offset so they stay distinct.
    pub combined: Clustering,
    pub warnings: Vec<String>,
}

fn resolve_ks(templates: &[Template], parts: &Partitioning, policy: KPolicy) -> Vec<Option<usize>> {
    match policy {
        KPolicy::GroundTruth => parts
            .subsets
            .values()
            .map(|idx| {
                let subjects: BTreeSet<_> = idx.iter().filter_map(|&i| templates[i].subject_id).collect();
                Some(subjects.len().max(1))
            })
            .collect(),
        KPolicy::Proportional(total) => {
            let sizes: Vec<usize> = parts.subsets.values().map(Vec::len).collect();
            let n: usize = sizes.iter().sum();
            if n == 0 {
                return vec![];
            }
            let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
            let mut ks: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let mut order: Vec<usize> = (0..ks.len()).collect();
            // Largest fractional remainder first, ties by subset order.
            order.sort_by(|&a, &b| {
                let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
                rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
            });
            let short = total.saturating_sub(ks.iter().sum());
            for &i in order.iter().take(short) {
                ks[i] += 1;
            }
            ks.into_iter().map(|k| Some(k.max(1))).collect()
        }
        KPolicy::Threshold(_) => vec![None; parts.subsets.len()],
    }
}

/// Clusters every subset independently and concatenates the results.
pub fn cluster_partitioned(
    templates: &[Template],
    parts: &Partitioning,
    linkage: Linkage,
    metric: Metric,
    policy: KPolicy,
) -> Result<PartitionedClustering> {
    let ks = resolve_ks(templates, parts, policy);
    let mut warnings = Vec::new();
    let mut jobs = Vec::with_capacity(ks.len());
    for ((label, idx), k) in parts.subsets.iter().zip(&ks) {
        let stop = match (k, policy) {
            (Some(k), _) => {
                let clipped = (*k).min(idx.len());
                if clipped < *k {
                    let msg = format!("partition {label}: k={k} clipped to subset size {}", idx.len());
                    warn!("{msg}");
                    warnings.push(msg);
                }
                StopRule::NumClusters(clipped)
            }
            (None, KPolicy::Threshold(t)) => StopRule::DistanceThreshold(t),
            (None, _) => unreachable!(),
        };
        jobs.push((label, idx, LinkageSpec::new(linkage, metric, stop)));
    }

    let results: Vec<Result<Clustering>> = jobs
        .par_iter()
        .map(|(_, idx, spec)| {
            let ids: Vec<u64> = idx.iter().map(|&i| templates[i].template_id).collect();
            let pts: Vec<&[f32]> = idx.iter().map(|&i| templates[i].primary().as_slice()).collect();
            hac_cluster(&ids, &pts, spec)
        })
        .collect();

    let mut per_partition = BTreeMap::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0;
    for ((label, _, _), res) in jobs.iter().zip(results) {
        let c = res?;
        c.offset_into(offset, &mut ids, &mut labels);
        offset += c.num_clusters();
        per_partition.insert((*label).clone(), c);
    }
    Ok(PartitionedClustering {
        per_partition,
        combined: Clustering::from_parts(ids, labels, offset),
        warnings,
    })
}
