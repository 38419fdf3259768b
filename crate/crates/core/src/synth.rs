//! Deterministic synthetic embeddings with subject, template, media and
//! frame structure, per-subject attributes and open-set gallery/probe splits.
//!
//! Each subject gets a prototype drawn uniformly on the unit sphere. A
//! sample is `normalize(prototype + media_offset + noise)`, where the
//! per-coordinate noise scale is `sigma / sqrt(dim)` so the noise vector has
//! norm close to `sigma`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::str::FromStr;

use crate::aggregate::ProbeFeatures;
use crate::data::{
    cosine_similarity, AttributeRecord, Dataset, Embedding, Gender, MediaId, Modality, Sample, SubjectId, Template,
    TemplateId,
};
use crate::error::{Error, Result};
use crate::rng::Prng;

/// Probe templates whose media come from two noise regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiModal {
    /// Fraction of probe templates that are multi-modal.
    pub probe_fraction: f64,
    /// Fraction of a multi-modal template's media drawn from the second
    /// regime.
    pub second_mode_share: f64,
    /// Norm of the per-template offset shared by the second-regime media.
    pub offset: f64,
    /// Noise norm in the second regime.
    pub noise: f64,
}

impl Default for MultiModal {
    fn default() -> Self {
        Self {
            probe_fraction: 1.0,
            second_mode_share: 0.5,
            offset: 0.9,
            noise: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub templates_per_subject: usize,
    pub media_per_template: usize,
    pub frames_per_media: usize,
    pub dim: usize,
    /// Noise norm of a sample around its subject prototype.
    pub within_subject_noise: f64,
    /// Noise norm shared by the frames of one media.
    pub media_noise: f64,
    /// Probability that a media is a still image rather than a video.
    pub image_fraction: f64,
    pub male_probability: f64,
    /// Relative weights of skin-tone buckets 1..=6.
    pub skin_tone_weights: [f64; 6],
    /// Probability that a subject's attributes are recorded as unknown.
    pub unknown_attribute_fraction: f64,
    /// Fraction of subjects with no gallery template.
    pub openset_fraction: f64,
    /// Number of disjoint galleries, 1 or 2.
    pub galleries: usize,
    pub multimodal: Option<MultiModal>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subjects: 100,
            templates_per_subject: 3,
            media_per_template: 3,
            frames_per_media: 5,
            dim: 64,
            within_subject_noise: 0.3,
            media_noise: 0.0,
            image_fraction: 0.5,
            male_probability: 0.5,
            skin_tone_weights: [1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            unknown_attribute_fraction: 0.0,
            openset_fraction: 0.2,
            galleries: 2,
            multimodal: None,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_subjects", self.num_subjects),
            ("templates_per_subject", self.templates_per_subject),
            ("media_per_template", self.media_per_template),
            ("frames_per_media", self.frames_per_media),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.dim < 2 {
            return Err(invalid(format!("dim must be at least 2, got {}", self.dim)));
        }
        if !(self.within_subject_noise > 0.0 && self.within_subject_noise.is_finite()) {
            return Err(invalid("within_subject_noise must be positive"));
        }
        if !(self.media_noise >= 0.0 && self.media_noise.is_finite()) {
            return Err(invalid("media_noise must be non-negative"));
        }
        unit_interval("image_fraction", self.image_fraction)?;
        unit_interval("male_probability", self.male_probability)?;
        unit_interval("unknown_attribute_fraction", self.unknown_attribute_fraction)?;
        if !(0.0..1.0).contains(&self.openset_fraction) {
            return Err(invalid(format!(
                "openset_fraction must lie in [0, 1), got {}",
                self.openset_fraction
            )));
        }
        if self.skin_tone_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.skin_tone_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(invalid("skin_tone_weights must be non-negative with a positive sum"));
        }
        if !(1..=2).contains(&self.galleries) {
            return Err(invalid(format!("galleries must be 1 or 2, got {}", self.galleries)));
        }
        if self.enrolled_count() < self.galleries {
            return Err(invalid("too few enrolled subjects to fill every gallery"));
        }
        if let Some(m) = &self.multimodal {
            unit_interval("multimodal.probe_fraction", m.probe_fraction)?;
            unit_interval("multimodal.second_mode_share", m.second_mode_share)?;
            if !(m.offset >= 0.0 && m.offset.is_finite() && m.noise > 0.0 && m.noise.is_finite()) {
                return Err(invalid("multimodal offset must be non-negative and noise positive"));
            }
        }
        Ok(())
    }

    fn enrolled_count(&self) -> usize {
        self.num_subjects - (self.openset_fraction * self.num_subjects as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    /// Gallery number, starting at 1.
    Gallery(u8),
    Probe,
}

impl Role {
    pub fn as_string(self) -> String {
        match self {
            Role::Gallery(g) => format!("gallery{g}"),
            Role::Probe => "probe".to_string(),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(Role::Probe),
            _ => s
                .strip_prefix("gallery")
                .and_then(|g| g.parse::<u8>().ok())
                .filter(|&g| g >= 1)
                .map(Role::Gallery)
                .ok_or_else(|| Error::InvalidInput(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub template_id: TemplateId,
    pub role: Role,
    /// For probes, the gallery template of the same subject in any gallery.
    pub mated: Option<TemplateId>,
}

/// Gallery and probe membership of every template.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub entries: Vec<SplitEntry>,
}

pub const SPLIT_HEADER: [&str; 3] = ["template_id", "role", "mated_gallery_template_id"];

impl Split {
    pub fn role_of(&self, template_id: TemplateId) -> Option<Role> {
        self.entries.iter().find(|e| e.template_id == template_id).map(|e| e.role)
    }

    /// Gallery numbers present, ascending.
    pub fn galleries(&self) -> Vec<u8> {
        let mut g: Vec<u8> = self
            .entries
            .iter()
            .filter_map(|e| match e.role {
                Role::Gallery(g) => Some(g),
                Role::Probe => None,
            })
            .collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<TemplateId> {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.template_id)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(SPLIT_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.template_id.to_string(),
                e.role.as_string(),
                e.mated.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        if rdr.headers()?.iter().ne(SPLIT_HEADER) {
            return Err(Error::Metadata {
                line: 1,
                message: format!("split header must be {}", SPLIT_HEADER.join(",")),
            });
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let bad = |message: String| Error::Metadata { line, message };
            let template_id = rec[0].parse().map_err(|_| bad(format!("bad template id {:?}", &rec[0])))?;
            let role = rec[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let mated = match &rec[2] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad mated id {s:?}")))?),
            };
            entries.push(SplitEntry {
                template_id,
                role,
                mated,
            });
        }
        Ok(Self { entries })
    }

    /// Templates of each gallery (ascending gallery number) and the probe
    /// templates, each in split order.
    pub fn select(&self, templates: &[Template]) -> Result<(Vec<Vec<Template>>, Vec<Template>)> {
        let by_id: HashMap<TemplateId, &Template> = templates.iter().map(|t| (t.template_id, t)).collect();
        let pick = |ids: Vec<TemplateId>| -> Result<Vec<Template>> {
            ids.into_iter()
                .map(|id| {
                    by_id
                        .get(&id)
                        .map(|t| (*t).clone())
                        .ok_or_else(|| Error::InvalidInput(format!("split names unknown template {id}")))
                })
                .collect()
        };
        let galleries = self
            .galleries()
            .into_iter()
            .map(|g| pick(self.ids_with_role(Role::Gallery(g))))
            .collect::<Result<_>>()?;
        Ok((galleries, pick(self.ids_with_role(Role::Probe))?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    pub split: Split,
}

fn random_direction(rng: &mut Prng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gaussian(rng: &mut Prng, dim: usize, norm: f64) -> Vec<f64> {
    let s = norm / (dim as f64).sqrt();
    (0..dim).map(|_| s * rng.normal()).collect()
}

fn normalized(v: &[f64]) -> Result<Embedding> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Embedding::from_f64(&v.iter().map(|x| x / n).collect::<Vec<_>>())
}

fn weighted_pick(rng: &mut Prng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if u < *w {
                return i;
            }
            u -= w;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Subject ids start at 1; template and media ids count up from 1 in
/// generation order, sample ids from 0.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let dim = config.dim;
    let mut rng = Prng::new(config.seed);

    struct Subject {
        id: SubjectId,
        prototype: Vec<f64>,
        attributes: AttributeRecord,
    }
    let mut subjects = Vec::with_capacity(config.num_subjects);
    for i in 0..config.num_subjects {
        let prototype = random_direction(&mut rng, dim);
        let gender = if rng.bernoulli(config.male_probability) {
            Gender::Male
        } else {
            Gender::Female
        };
        let skin = weighted_pick(&mut rng, &config.skin_tone_weights) as u8 + 1;
        let attributes = if rng.bernoulli(config.unknown_attribute_fraction) {
            AttributeRecord::unknown()
        } else {
            AttributeRecord::new(gender, Some(skin))?
        };
        subjects.push(Subject {
            id: i as SubjectId + 1,
            prototype,
            attributes,
        });
    }

    // Unenrolled subjects: the first `n_open` of a seeded permutation.
    let mut order: Vec<usize> = (0..config.num_subjects).collect();
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let n_open = config.num_subjects - config.enrolled_count();
    let mut gallery_of: BTreeMap<usize, u8> = BTreeMap::new();
    let mut enrolled: Vec<usize> = order[n_open..].to_vec();
    enrolled.sort_unstable();
    for (rank, s) in enrolled.into_iter().enumerate() {
        gallery_of.insert(s, (rank % config.galleries) as u8 + 1);
    }

    let mut samples = Vec::new();
    let mut entries = Vec::new();
    let mut next_template: TemplateId = 1;
    let mut next_media: MediaId = 1;
    let mut next_sample = 0u64;
    for (si, subject) in subjects.iter().enumerate() {
        let mut srng = Prng::derive(config.seed, si as u64);
        let mut gallery_template = None;
        for t in 0..config.templates_per_subject {
            let template_id = next_template;
            next_template += 1;
            let role = match (t, gallery_of.get(&si)) {
                (0, Some(&g)) => Role::Gallery(g),
                _ => Role::Probe,
            };
            if matches!(role, Role::Gallery(_)) {
                gallery_template = Some(template_id);
            }
            let multimodal = match (&config.multimodal, role) {
                (Some(m), Role::Probe) if srng.bernoulli(m.probe_fraction) => Some(*m),
                _ => None,
            };
            let second_mode_media = multimodal.map_or(0, |m| {
                let n = (m.second_mode_share * config.media_per_template as f64).round() as usize;
                n.min(config.media_per_template)
            });
            let pose = multimodal.map(|m| {
                random_direction(&mut srng, dim)
                    .into_iter()
                    .map(|x| x * m.offset)
                    .collect::<Vec<f64>>()
            });
            for m in 0..config.media_per_template {
                let media_id = next_media;
                next_media += 1;
                let image = srng.bernoulli(config.image_fraction);
                let (modality, frames) = if image {
                    (Modality::Image, 1)
                } else {
                    (Modality::VideoFrame, config.frames_per_media)
                };
                let second = m < second_mode_media;
                let mut center = subject.prototype.clone();
                if config.media_noise > 0.0 {
                    let shift = gaussian(&mut srng, dim, config.media_noise);
                    center.iter_mut().zip(&shift).for_each(|(c, s)| *c += s);
                }
                let noise = match (second, multimodal) {
                    (true, Some(mm)) => {
                        let pose = pose.as_ref().expect("pose exists for multi-modal templates");
                        center.iter_mut().zip(pose).for_each(|(c, p)| *c += p);
                        mm.noise
                    }
                    _ => config.within_subject_noise,
                };
                for _ in 0..frames {
                    let mut v = center.clone();
                    let e = gaussian(&mut srng, dim, noise);
                    v.iter_mut().zip(&e).for_each(|(x, n)| *x += n);
                    samples.push(Sample {
                        sample_id: next_sample,
                        subject_id: Some(subject.id),
                        template_id,
                        media_id,
                        modality,
                        attributes: subject.attributes,
                        embedding: normalized(&v)?,
                    });
                    next_sample += 1;
                }
            }
            entries.push(SplitEntry {
                template_id,
                role,
                mated: None,
            });
        }
        if let Some(g) = gallery_template {
            let start = entries.len() - config.templates_per_subject;
            for e in &mut entries[start..] {
                if e.role == Role::Probe {
                    e.mated = Some(g);
                }
            }
        }
    }
    let provenance = format!("synth:seed={}", config.seed);
    Ok(SynthData {
        dataset: Dataset::new(samples, provenance)?,
        split: Split { entries },
    })
}

/// Raw sample features of each probe template in the split, in split order.
pub fn probe_features(dataset: &Dataset, split: &Split) -> Result<Vec<ProbeFeatures>> {
    let grouped = dataset.by_template();
    split
        .ids_with_role(Role::Probe)
        .into_iter()
        .map(|id| {
            let samples = grouped
                .get(&id)
                .ok_or_else(|| Error::InvalidInput(format!("split names unknown template {id}")))?;
            let first = samples[0].subject_id;
            Ok(ProbeFeatures {
                template_id: id,
                subject_id: if samples.iter().all(|s| s.subject_id == first) { first } else { None },
                features: samples.iter().map(|s| s.embedding.clone()).collect(),
            })
        })
        .collect()
}

/// Mean within-subject minus mean between-subject sample cosine similarity,
/// estimated on up to `pairs` random sample pairs of each kind.
pub fn cosine_margin(dataset: &Dataset, pairs: usize, seed: u64) -> Result<f64> {
    let samples = &dataset.samples;
    let mut by_subject: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(id) = s.subject_id {
            by_subject.entry(id).or_default().push(i);
        }
    }
    let groups: Vec<&Vec<usize>> = by_subject.values().filter(|g| g.len() >= 2).collect();
    if groups.is_empty() || by_subject.len() < 2 {
        return Err(Error::InvalidInput("need two subjects and a subject with two samples".into()));
    }
    let labelled: Vec<usize> = by_subject.values().flatten().copied().collect();
    let mut rng = Prng::new(seed);
    let (mut within, mut between) = (0.0, 0.0);
    for _ in 0..pairs {
        let g = groups[rng.below(groups.len())];
        let a = g[rng.below(g.len())];
        let mut b = g[rng.below(g.len() - 1)];
        if b == a {
            b = g[g.len() - 1];
        }
        within += cosine_similarity(&samples[a].embedding, &samples[b].embedding)?;
        loop {
            let x = labelled[rng.below(labelled.len())];
            let y = labelled[rng.below(labelled.len())];
            if samples[x].subject_id != samples[y].subject_id {
                between += cosine_similarity(&samples[x].embedding, &samples[y].embedding)?;
                break;
            }
        }
    }
    Ok((within - between) / pairs as f64)
}
