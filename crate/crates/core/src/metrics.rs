//! Clustering and open-set identification metrics.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use rayon::prelude::*;

use crate::data::{cosine_similarity, SubjectId, Template, TemplateId};
use crate::error::{Error, Result};
use crate::hac::Clustering;

// ---------------------------------------------------------------------------
// Pairwise clustering scores

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    /// Pairs sharing a predicted cluster.
    pub same_cluster: u64,
    /// Pairs sharing a ground-truth class.
    pub same_class: u64,
    /// Pairs sharing both.
    pub both: u64,
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair counts from a contingency table of aligned label slices.
pub fn pair_counts<C: Eq + Hash>(pred: &[usize], truth: &[C]) -> PairCounts {
    debug_assert_eq!(pred.len(), truth.len());
    let mut class_ids: HashMap<&C, usize> = HashMap::new();
    let mut cluster_sizes: HashMap<usize, u64> = HashMap::new();
    let mut class_sizes: HashMap<usize, u64> = HashMap::new();
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    for (&p, t) in pred.iter().zip(truth) {
        let next = class_ids.len();
        let c = *class_ids.entry(t).or_insert(next);
        *cluster_sizes.entry(p).or_default() += 1;
        *class_sizes.entry(c).or_default() += 1;
        *cells.entry((p, c)).or_default() += 1;
    }
    PairCounts {
        same_cluster: cluster_sizes.values().map(|&n| pairs(n)).sum(),
        same_class: class_sizes.values().map(|&n| pairs(n)).sum(),
        both: cells.values().map(|&n| pairs(n)).sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: PairCounts,
}

impl PairCounts {
    /// With no same-cluster pairs precision is 1; with no same-class pairs
    /// recall is 1.
    pub fn scores(self) -> PairwiseScores {
        let precision = if self.same_cluster == 0 {
            1.0
        } else {
            self.both as f64 / self.same_cluster as f64
        };
        let recall = if self.same_class == 0 {
            1.0
        } else {
            self.both as f64 / self.same_class as f64
        };
        let f1 = f_beta(precision, recall, 1.0).expect("rates in [0, 1]");
        PairwiseScores {
            precision,
            recall,
            f1,
            counts: self,
        }
    }
}

/// Pairwise precision, recall and F1 of `pred` against per-item classes.
pub fn pairwise_prf<C: Eq + Hash + Clone>(pred: &Clustering, truth: &HashMap<u64, C>) -> Result<PairwiseScores> {
    let classes = pred
        .item_ids()
        .iter()
        .map(|id| truth.get(id).cloned().ok_or(Error::MissingLabel(*id)))
        .collect::<Result<Vec<C>>>()?;
    Ok(pair_counts(pred.labels(), &classes).scores())
}

/// `(b^2 + 1) P R / (b^2 P + R)`, zero when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<f64> {
    let unit = 0.0..=1.0;
    if !unit.contains(&precision) || !unit.contains(&recall) {
        return Err(Error::InvalidInput(format!(
            "precision {precision} and recall {recall} must lie in [0, 1]"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta {beta} must be positive")));
    }
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    Ok(if denom == 0.0 {
        0.0
    } else {
        (b2 + 1.0) * precision * recall / denom
    })
}

// ---------------------------------------------------------------------------
// Score tables

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEntry {
    pub template_id: TemplateId,
    /// Index of the mated gallery entry, if the subject is enrolled.
    pub mated: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub template_id: TemplateId,
    pub subject_id: Option<SubjectId>,
}

/// Probe-by-gallery similarity matrix, higher meaning more similar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    probes: Vec<ProbeEntry>,
    gallery: Vec<GalleryEntry>,
    scores: Vec<f64>,
}

impl ScoreTable {
    /// `scores` is row-major, one row per probe.
    pub fn new(probes: Vec<ProbeEntry>, gallery: Vec<GalleryEntry>, scores: Vec<f64>) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::InvalidInput("gallery is empty".into()));
        }
        if scores.len() != probes.len() * gallery.len() {
            return Err(Error::InvalidInput(format!(
                "{} scores for {}x{} table",
                scores.len(),
                probes.len(),
                gallery.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite score".into()));
        }
        if let Some(p) = probes.iter().find(|p| p.mated.is_some_and(|m| m >= gallery.len())) {
            return Err(Error::InvalidInput(format!(
                "probe {} mated to a gallery entry that does not exist",
                p.template_id
            )));
        }
        Ok(Self {
            probes,
            gallery,
            scores,
        })
    }

    pub fn probes(&self) -> &[ProbeEntry] {
        &self.probes
    }

    pub fn gallery(&self) -> &[GalleryEntry] {
        &self.gallery
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let g = self.gallery.len();
        &self.scores[probe * g..(probe + 1) * g]
    }

    pub fn score(&self, probe: usize, gallery: usize) -> f64 {
        self.row(probe)[gallery]
    }

    fn top_score(&self, probe: usize) -> f64 {
        self.row(probe).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rank of the mated entry: one plus the number of other entries scoring
    /// at least as high, so ties rank against the probe.
    pub fn mated_rank(&self, probe: usize) -> Option<usize> {
        let m = self.probes[probe].mated?;
        let row = self.row(probe);
        let s = row[m];
        Some(1 + row.iter().enumerate().filter(|&(g, &x)| g != m && x >= s).count())
    }

    /// CSV with header `probe_id,mated_gallery_id,<gallery ids...>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["probe_id".to_string(), "mated_gallery_id".to_string()];
        header.extend(self.gallery.iter().map(|g| g.template_id.to_string()));
        w.write_record(&header)?;
        for (p, entry) in self.probes.iter().enumerate() {
            let mut rec = vec![
                entry.template_id.to_string(),
                entry
                    .mated
                    .map(|m| self.gallery[m].template_id.to_string())
                    .unwrap_or_default(),
            ];
            rec.extend(self.row(p).iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the [`ScoreTable::write_csv`] layout; gallery subjects are unknown.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let bad = |m: String| Error::InvalidInput(m);
        let header = r.headers()?.clone();
        let gallery_ids = header
            .iter()
            .skip(2)
            .map(|s| s.parse::<u64>().map_err(|_| bad(format!("bad gallery id {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let gallery: Vec<GalleryEntry> = gallery_ids
            .iter()
            .map(|&template_id| GalleryEntry {
                template_id,
                subject_id: None,
            })
            .collect();
        let mut probes = Vec::new();
        let mut scores = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let template_id = rec[0].parse().map_err(|_| bad(format!("bad probe id {:?}", &rec[0])))?;
            let mated = match &rec[1] {
                "" => None,
                s => {
                    let id: u64 = s.parse().map_err(|_| bad(format!("bad mated id {s:?}")))?;
                    Some(
                        gallery_ids
                            .iter()
                            .position(|&g| g == id)
                            .ok_or_else(|| bad(format!("mated id {id} not in gallery")))?,
                    )
                }
            };
            for s in rec.iter().skip(2) {
                scores.push(s.parse::<f64>().map_err(|_| bad(format!("bad score {s:?}")))?);
            }
            probes.push(ProbeEntry { template_id, mated });
        }
        Self::new(probes, gallery, scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// Best-matching probe representation.
    #[default]
    Max,
    Mean,
}

/// Scores every probe against every gallery template by fused cosine
/// similarity. A probe is mated to the gallery template of its subject.
pub fn score_probes(probes: &[Template], gallery: &[Template], fusion: Fusion) -> Result<ScoreTable> {
    let mut by_subject: HashMap<SubjectId, usize> = HashMap::new();
    for (i, g) in gallery.iter().enumerate() {
        if let Some(s) = g.subject_id {
            if by_subject.insert(s, i).is_some() {
                return Err(Error::DuplicateGallerySubject(s));
            }
        }
    }
    let rows: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|p| {
            gallery
                .iter()
                .map(|g| fused_similarity(p, g, fusion))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let probe_entries = probes
        .iter()
        .map(|p| ProbeEntry {
            template_id: p.template_id,
            mated: p.subject_id.and_then(|s| by_subject.get(&s).copied()),
        })
        .collect();
    let gallery_entries = gallery
        .iter()
        .map(|g| GalleryEntry {
            template_id: g.template_id,
            subject_id: g.subject_id,
        })
        .collect();
    ScoreTable::new(probe_entries, gallery_entries, rows.concat())
}

fn fused_similarity(probe: &Template, gallery: &Template, fusion: Fusion) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut count = 0usize;
    for pr in probe.representations() {
        for gr in gallery.representations() {
            let s = cosine_similarity(pr, gr)?;
            best = best.max(s);
            sum += s;
            count += 1;
        }
    }
    Ok(match fusion {
        Fusion::Max => best,
        Fusion::Mean => sum / count as f64,
    })
}

// ---------------------------------------------------------------------------
// Identification rates

pub const RANKS: [usize; 5] = [1, 5, 10, 25, 50];
pub const FPIR_TARGETS: [f64; 2] = [0.1, 0.01];

fn mated_ranks(table: &ScoreTable) -> Result<Vec<usize>> {
    let ranks: Vec<usize> = (0..table.probes.len()).filter_map(|p| table.mated_rank(p)).collect();
    if ranks.is_empty() {
        return Err(Error::NoMatedProbes);
    }
    Ok(ranks)
}

/// Fraction of mated probes with rank at most `k`, for each `k` in `ks`.
/// Unmated probes are ignored.
pub fn cmc_at(table: &ScoreTable, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let ranks = mated_ranks(table)?;
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect())
}

/// Rank-k rates at the standard report ranks.
pub fn cmc(table: &ScoreTable) -> Result<Vec<(usize, f64)>> {
    cmc_at(table, &RANKS)
}

/// Full curve for `k = 1..=gallery size`.
pub fn cmc_curve(table: &ScoreTable) -> Result<Vec<(usize, f64)>> {
    let ks: Vec<usize> = (1..=table.gallery.len()).collect();
    cmc_at(table, &ks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpirPoint {
    pub fpir_target: f64,
    /// Accept threshold on the top-1 score.
    pub threshold: f64,
    /// Non-mated probes whose top-1 score reaches the threshold.
    pub fpir: f64,
    pub tpir: f64,
}

/// For each target, the smallest threshold at which at most the target
/// fraction of unmated probes reach it with their top score, and the share
/// of mated probes retrieved at rank 1 with a score at or above it.
pub fn tpir_fpir(table: &ScoreTable, targets: &[f64]) -> Result<Vec<TpirPoint>> {
    let mut nonmated: Vec<f64> = (0..table.probes.len())
        .filter(|&p| table.probes[p].mated.is_none())
        .map(|p| table.top_score(p))
        .collect();
    if nonmated.is_empty() {
        return Err(Error::NotOpenSet);
    }
    let mated: Vec<(usize, f64)> = (0..table.probes.len())
        .filter_map(|p| {
            let m = table.probes[p].mated?;
            Some((table.mated_rank(p).unwrap(), table.score(p, m)))
        })
        .collect();
    if mated.is_empty() {
        return Err(Error::NoMatedProbes);
    }
    nonmated.sort_by(|a, b| b.total_cmp(a));
    let m = nonmated.len();
    targets
        .iter()
        .map(|&target| {
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::InvalidInput(format!("FPIR target {target} outside [0, 1]")));
            }
            let allowed = (target * m as f64 + 1e-9).floor() as usize;
            let threshold = if allowed >= m {
                f64::NEG_INFINITY
            } else {
                nonmated[allowed].next_up()
            };
            let false_hits = nonmated.iter().filter(|&&s| s >= threshold).count();
            let hits = mated.iter().filter(|&&(rank, s)| rank == 1 && s >= threshold).count();
            Ok(TpirPoint {
                fpir_target: target,
                threshold,
                fpir: false_hits as f64 / m as f64,
                tpir: hits as f64 / mated.len() as f64,
            })
        })
        .collect()
}

/// One row of an identification table.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentReport {
    pub rank_k: Vec<(usize, f64)>,
    pub tpir_at_fpir: Vec<(f64, f64)>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "rank1",
    "rank5",
    "rank10",
    "rank25",
    "rank50",
    "tpir_fpir_0.1",
    "tpir_fpir_0.01",
];

impl IdentReport {
    /// Rank rates plus TPIR at both standard operating points. A closed-set
    /// table yields rank rates only.
    pub fn evaluate(table: &ScoreTable) -> Result<Self> {
        let rank_k = cmc(table)?;
        let tpir_at_fpir = match tpir_fpir(table, &FPIR_TARGETS) {
            Ok(points) => points.iter().map(|p| (p.fpir_target, p.tpir)).collect(),
            Err(Error::NotOpenSet) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(Self { rank_k, tpir_at_fpir })
    }

    pub fn rank(&self, k: usize) -> Option<f64> {
        self.rank_k.iter().find(|r| r.0 == k).map(|r| r.1)
    }

    pub fn tpir(&self, fpir: f64) -> Option<f64> {
        self.tpir_at_fpir.iter().find(|r| r.0 == fpir).map(|r| r.1)
    }

    /// Element-wise mean of reports sharing the same layout.
    pub fn average(reports: &[IdentReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::EmptyInput)?;
        let n = reports.len() as f64;
        let mut out = first.clone();
        for (i, r) in out.rank_k.iter_mut().enumerate() {
            r.1 = reports.iter().map(|x| x.rank_k[i].1).sum::<f64>() / n;
        }
        for (i, r) in out.tpir_at_fpir.iter_mut().enumerate() {
            r.1 = reports
                .iter()
                .map(|x| x.tpir_at_fpir.get(i).map_or(0.0, |v| v.1))
                .sum::<f64>()
                / n;
        }
        Ok(out)
    }

    pub fn cells(&self) -> Vec<String> {
        let mut cells: Vec<String> = RANKS
            .iter()
            .map(|&k| self.rank(k).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        cells.extend(
            FPIR_TARGETS
                .iter()
                .map(|&f| self.tpir(f).map(|v| v.to_string()).unwrap_or_default()),
        );
        cells
    }
}

/// Rows labelled e.g. `Gallery 1`, `Gallery 2`, `Average` under the header
/// `gallery,rank1,rank5,rank10,rank25,rank50,tpir_fpir_0.1,tpir_fpir_0.01`.
pub fn write_report_csv<W: Write>(rows: &[(String, IdentReport)], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["gallery"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header)?;
    for (label, r) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(r.cells());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `k,rate` rows.
pub fn write_curve_csv<W: Write>(curve: &[(usize, f64)], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["k", "rate"])?;
    for (k, r) in curve {
        w.write_record([k.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeRecord, Embedding};

    fn clustering(labels: &[usize]) -> Clustering {
        Clustering::from_labels((0..labels.len() as u64).collect(), labels).unwrap()
    }

    fn truth(classes: &[u32]) -> HashMap<u64, u32> {
        classes.iter().enumerate().map(|(i, &c)| (i as u64, c)).collect()
    }

    #[test]
    fn perfect_clustering_scores_one() {
        let s = pairwise_prf(&clustering(&[0, 0, 1, 1, 2]), &truth(&[5, 5, 7, 7, 9])).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_big_cluster() {
        let s = pairwise_prf(&clustering(&[0, 0, 0, 0]), &truth(&[0, 0, 1, 1])).unwrap();
        assert_eq!(s.precision, 2.0 / 6.0);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singletons_convention() {
        let s = pairwise_prf(&clustering(&[0, 1, 2, 3]), &truth(&[0, 0, 1, 1])).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 0.0, 0.0));
        let s = pairwise_prf(&clustering(&[0, 1]), &truth(&[0, 1])).unwrap();
        assert_eq!((s.precision, s.recall), (1.0, 1.0));
    }

    #[test]
    fn missing_label() {
        let mut t = truth(&[0, 0]);
        t.remove(&1);
        assert!(matches!(pairwise_prf(&clustering(&[0, 0]), &t), Err(Error::MissingLabel(1))));
    }

    #[test]
    fn f_beta_cases() {
        for x in [0.1, 0.5, 0.93] {
            assert!((f_beta(x, x, 1.0).unwrap() - x).abs() < 1e-15);
        }
        assert!((f_beta(0.5, 1.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f_beta(0.0, 0.7, 1.0).unwrap(), 0.0);
        assert_eq!(f_beta(0.7, 0.0, 2.0).unwrap(), 0.0);
        assert!(f_beta(1.2, 0.5, 1.0).is_err());
        assert!(f_beta(0.5, 0.5, 0.0).is_err());
    }

    fn table(rows: &[&[f64]], mated: &[Option<usize>]) -> ScoreTable {
        let g = rows[0].len();
        ScoreTable::new(
            mated
                .iter()
                .enumerate()
                .map(|(i, &m)| ProbeEntry { template_id: i as u64, mated: m })
                .collect(),
            (0..g)
                .map(|i| GalleryEntry { template_id: 100 + i as u64, subject_id: Some(i as u32) })
                .collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn cmc_hand_counted() {
        let t = table(&[&[0.5, 0.9, 0.1]], &[Some(0)]);
        assert_eq!(t.mated_rank(0), Some(2));
        let r = cmc(&t).unwrap();
        assert_eq!(r[0], (1, 0.0));
        assert_eq!(r[1], (5, 1.0));
    }

    #[test]
    fn cmc_ties_rank_against_probe() {
        let t = table(&[&[0.7, 0.7, 0.1]], &[Some(0)]);
        assert_eq!(t.mated_rank(0), Some(2));
        let t = table(&[&[0.9, 0.2], &[0.1, 0.8]], &[Some(0), Some(1)]);
        assert_eq!(cmc(&t).unwrap()[0].1, 1.0);
    }

    #[test]
    fn cmc_requires_mated() {
        let t = table(&[&[0.5, 0.9]], &[None]);
        assert!(matches!(cmc(&t), Err(Error::NoMatedProbes)));
    }

    #[test]
    fn tpir_separable_and_never_top() {
        let t = table(&[&[0.9, 0.1], &[0.2, 0.95], &[0.3, 0.4]], &[Some(0), Some(1), None]);
        for p in tpir_fpir(&t, &FPIR_TARGETS).unwrap() {
            assert_eq!(p.tpir, 1.0);
        }
        let t = table(&[&[0.1, 0.9], &[0.95, 0.2], &[0.3, 0.4]], &[Some(0), Some(1), None]);
        for p in tpir_fpir(&t, &FPIR_TARGETS).unwrap() {
            assert_eq!(p.tpir, 0.0);
        }
        let closed = table(&[&[0.9, 0.1]], &[Some(0)]);
        assert!(matches!(tpir_fpir(&closed, &FPIR_TARGETS), Err(Error::NotOpenSet)));
    }

    #[test]
    fn ten_nonmated_threshold() {
        // unmated top scores 0.1..=1.0; at FPIR 0.1 only the highest may pass
        let mut rows: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64 / 10.0, 0.0]).collect();
        rows.push(vec![0.95, 0.0]);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mut mated = vec![None; 10];
        mated.push(Some(0));
        let t = table(&refs, &mated);
        let p = &tpir_fpir(&t, &[0.1]).unwrap()[0];
        assert!(p.threshold > 0.9 && p.threshold < 0.9 + 1e-12);
        assert_eq!(p.fpir, 0.1);
        assert_eq!(p.tpir, 1.0);
    }

    fn tmpl(id: u64, subject: u32, reps: &[&[f32]]) -> Template {
        Template::new(
            id,
            Some(subject),
            AttributeRecord::unknown(),
            reps.iter().map(|r| Embedding::new(r.to_vec()).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn score_probes_cases() {
        let gallery = [tmpl(10, 1, &[&[1.0, 0.0]]), tmpl(11, 2, &[&[0.0, 1.0]])];
        let probes = [tmpl(0, 1, &[&[2.0, 0.0]]), tmpl(1, 3, &[&[0.0, 3.0]])];
        let t = score_probes(&probes, &gallery, Fusion::Max).unwrap();
        assert!((t.score(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(t.score(0, 1), 0.0);
        assert_eq!(t.probes()[0].mated, Some(0));
        assert_eq!(t.probes()[1].mated, None);

        let two = [tmpl(0, 1, &[&[1.0, 0.2], &[0.1, 1.0]])];
        let a = score_probes(&[tmpl(0, 1, &[&[1.0, 0.2]])], &gallery, Fusion::Max).unwrap();
        let b = score_probes(&[tmpl(0, 1, &[&[0.1, 1.0]])], &gallery, Fusion::Max).unwrap();
        let both = score_probes(&two, &gallery, Fusion::Max).unwrap();
        for g in 0..2 {
            assert_eq!(both.score(0, g), a.score(0, g).max(b.score(0, g)));
        }
        let mean = score_probes(&two, &gallery, Fusion::Mean).unwrap();
        assert!((mean.score(0, 0) - (a.score(0, 0) + b.score(0, 0)) / 2.0).abs() < 1e-15);

        let dup = [tmpl(10, 1, &[&[1.0, 0.0]]), tmpl(11, 1, &[&[0.0, 1.0]])];
        assert!(matches!(
            score_probes(&probes, &dup, Fusion::Max),
            Err(Error::DuplicateGallerySubject(1))
        ));
    }

    #[test]
    fn score_table_csv_round_trip() {
        let t = table(&[&[0.5, 0.25], &[0.125, 1.0]], &[Some(1), None]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ScoreTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.probes(), t.probes());
        for p in 0..2 {
            assert_eq!(back.row(p), t.row(p));
        }
    }

    #[test]
    fn report_csv_layout() {
        let t = table(&[&[0.9, 0.1], &[0.3, 0.4]], &[Some(0), None]);
        let r = IdentReport::evaluate(&t).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&[("Gallery 1".into(), r.clone()), ("Average".into(), r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "gallery,rank1,rank5,rank10,rank25,rank50,tpir_fpir_0.1,tpir_fpir_0.01"
        );
        assert_eq!(lines.next().unwrap(), "Gallery 1,1,1,1,1,1,1,1");
    }
}
