//! Data model and vector math shared by the rest of the crate.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub type SampleId = u64;
pub type TemplateId = u64;
pub type MediaId = u64;
pub type SubjectId = u32;

/// A dense, finite feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Narrows a 64-bit vector to storage precision.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

pub fn l2_normalize(a: &Embedding) -> Result<Embedding> {
    let n = a.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Embedding::new(a.0.iter().map(|&v| (v as f64 / n) as f32).collect())
}

/// Arithmetic mean accumulated in 64 bits.
pub(crate) fn mean_f64<'a, I>(vectors: I, dim: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0.0f64; dim];
    let mut count = 0usize;
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySet);
    }
    let inv = count as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    VideoFrame,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::VideoFrame => "frame",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "image" => Some(Modality::Image),
            "frame" => Some(Modality::VideoFrame),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Gender {
    pub fn is_known(self) -> bool {
        self != Gender::Unknown
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        })
    }
}

/// Skin-tone buckets run 1..=6.
pub const SKIN_TONE_BUCKETS: std::ops::RangeInclusive<u8> = 1..=6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AttributeRecord {
    pub gender: Gender,
    pub skin_tone: Option<u8>,
}

impl AttributeRecord {
    pub fn new(gender: Gender, skin_tone: Option<u8>) -> Result<Self> {
        if let Some(t) = skin_tone {
            if !SKIN_TONE_BUCKETS.contains(&t) {
                return Err(Error::InvalidInput(format!("skin tone {t} outside 1..=6")));
            }
        }
        Ok(Self { gender, skin_tone })
    }

    pub fn unknown() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: SampleId,
    pub subject_id: Option<SubjectId>,
    pub template_id: TemplateId,
    pub media_id: MediaId,
    pub modality: Modality,
    pub attributes: AttributeRecord,
    pub embedding: Embedding,
}

/// Aggregated representation of one enrollment: one vector for mean
/// aggregation, several for cluster aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub template_id: TemplateId,
    pub subject_id: Option<SubjectId>,
    pub attributes: AttributeRecord,
    representations: Vec<Embedding>,
}

impl Template {
    pub fn new(
        template_id: TemplateId,
        subject_id: Option<SubjectId>,
        attributes: AttributeRecord,
        representations: Vec<Embedding>,
    ) -> Result<Self> {
        let first = representations.first().ok_or(Error::EmptySet)?;
        if let Some(bad) = representations.iter().find(|r| r.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: bad.dim(),
            });
        }
        Ok(Self {
            template_id,
            subject_id,
            attributes,
            representations,
        })
    }

    pub fn representations(&self) -> &[Embedding] {
        &self.representations
    }

    /// The first representation; the only one for mean-aggregated templates.
    pub fn primary(&self) -> &Embedding {
        &self.representations[0]
    }

    pub fn dim(&self) -> usize {
        self.representations[0].dim()
    }
}

/// Two-stage mean: frames are averaged within each media, then the media
/// means are averaged with equal weight.
pub fn media_average(samples: &[Sample]) -> Result<Embedding> {
    let first = samples.first().ok_or(Error::EmptyTemplate)?;
    let dim = first.embedding.dim();
    let mut by_media: BTreeMap<MediaId, Vec<&[f32]>> = BTreeMap::new();
    for s in samples {
        if s.template_id != first.template_id {
            return Err(Error::TemplateMismatch {
                first: first.template_id,
                other: s.template_id,
            });
        }
        if s.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.embedding.dim(),
            });
        }
        by_media
            .entry(s.media_id)
            .or_default()
            .push(s.embedding.as_slice());
    }
    let mut acc = vec![0.0f64; dim];
    for frames in by_media.values() {
        let m = mean_f64(frames.iter().copied(), dim)?;
        acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
    }
    let n = by_media.len() as f64;
    Embedding::new(acc.iter().map(|a| (a / n) as f32).collect())
}

/// A sample collection with shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dimension: usize,
    pub provenance: String,
}

impl Dataset {
    /// Validates dimension agreement, unique sample ids and that every
    /// media belongs to a single template.
    pub fn new(samples: Vec<Sample>, provenance: impl Into<String>) -> Result<Self> {
        let dimension = samples.first().ok_or(Error::EmptyInput)?.embedding.dim();
        let mut ids = std::collections::HashSet::with_capacity(samples.len());
        let mut media_owner: BTreeMap<MediaId, TemplateId> = BTreeMap::new();
        for s in &samples {
            if s.embedding.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: s.embedding.dim(),
                });
            }
            if !ids.insert(s.sample_id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate sample id {}",
                    s.sample_id
                )));
            }
            let owner = *media_owner.entry(s.media_id).or_insert(s.template_id);
            if owner != s.template_id {
                return Err(Error::InvalidInput(format!(
                    "media {} spans templates {owner} and {}",
                    s.media_id, s.template_id
                )));
            }
        }
        Ok(Self {
            samples,
            dimension,
            provenance: provenance.into(),
        })
    }

    /// Samples grouped by template id, in ascending id order.
    pub fn by_template(&self) -> BTreeMap<TemplateId, Vec<&Sample>> {
        let mut map: BTreeMap<TemplateId, Vec<&Sample>> = BTreeMap::new();
        for s in &self.samples {
            map.entry(s.template_id).or_default().push(s);
        }
        map
    }

    /// Media-averaged template for `template_id`.
    pub fn template(&self, template_id: TemplateId, normalize: bool) -> Result<Template> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.template_id == template_id)
            .cloned()
            .collect();
        template_from_samples(&samples, normalize)
    }

    /// One media-averaged template per template id, in ascending id order.
    pub fn templates(&self, normalize: bool) -> Result<Vec<Template>> {
        self.by_template()
            .into_values()
            .map(|group| {
                let owned: Vec<Sample> = group.into_iter().cloned().collect();
                template_from_samples(&owned, normalize)
            })
            .collect()
    }
}

/// Subject and attributes are taken when all samples agree, else unknown.
pub fn template_from_samples(samples: &[Sample], normalize: bool) -> Result<Template> {
    let first = samples.first().ok_or(Error::EmptyTemplate)?;
    let mut embedding = media_average(samples)?;
    if normalize {
        embedding = l2_normalize(&embedding)?;
    }
    let subject_id = if samples.iter().all(|s| s.subject_id == first.subject_id) {
        first.subject_id
    } else {
        None
    };
    let gender = if samples
        .iter()
        .all(|s| s.attributes.gender == first.attributes.gender)
    {
        first.attributes.gender
    } else {
        Gender::Unknown
    };
    let skin_tone = if samples
        .iter()
        .all(|s| s.attributes.skin_tone == first.attributes.skin_tone)
    {
        first.attributes.skin_tone
    } else {
        None
    };
    Template::new(
        first.template_id,
        subject_id,
        AttributeRecord { gender, skin_tone },
        vec![embedding],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn sample(id: u64, media: u64, modality: Modality, v: &[f32]) -> Sample {
        Sample {
            sample_id: id,
            subject_id: Some(1),
            template_id: 10,
            media_id: media,
            modality,
            attributes: AttributeRecord::unknown(),
            embedding: emb(v),
        }
    }

    #[test]
    fn media_average_single_image_is_identity() {
        let s = [sample(0, 0, Modality::Image, &[0.25, -3.0, 7.5])];
        assert_eq!(media_average(&s).unwrap(), emb(&[0.25, -3.0, 7.5]));
    }

    #[test]
    fn media_average_weights_media_equally() {
        let s = [
            sample(0, 1, Modality::VideoFrame, &[1.0, 0.0]),
            sample(1, 1, Modality::VideoFrame, &[0.0, 1.0]),
            sample(2, 2, Modality::Image, &[1.0, 1.0]),
        ];
        assert_eq!(media_average(&s).unwrap(), emb(&[0.75, 0.75]));
    }

    #[test]
    fn media_average_identical_media() {
        let v = [0.3, 0.1, -0.9];
        let s: Vec<_> = (0..3).map(|i| sample(i, i, Modality::Image, &v)).collect();
        let out = media_average(&s).unwrap();
        for (a, b) in out.as_slice().iter().zip(&v) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn media_average_errors() {
        assert!(matches!(media_average(&[]), Err(Error::EmptyTemplate)));
        let s = [
            sample(0, 0, Modality::Image, &[1.0, 0.0]),
            sample(1, 1, Modality::Image, &[1.0]),
        ];
        assert!(matches!(
            media_average(&s),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut other = sample(1, 1, Modality::Image, &[1.0, 0.0]);
        other.template_id = 11;
        let s = [sample(0, 0, Modality::Image, &[1.0, 0.0]), other];
        assert!(matches!(
            media_average(&s),
            Err(Error::TemplateMismatch { .. })
        ));
    }

    #[test]
    fn cosine_distance_cases() {
        let x = emb(&[1.0, 0.0]);
        assert_eq!(cosine_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(cosine_distance(&x, &emb(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&x, &emb(&[-1.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&x, &emb(&[0.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn normalize_cases() {
        let n = l2_normalize(&emb(&[3.0, 4.0])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-7);
        assert!((n.norm() - 1.0).abs() < 1e-6);
        let u = emb(&[0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&u).unwrap(), u);
        assert!(matches!(
            l2_normalize(&emb(&[0.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(matches!(
            Embedding::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(Embedding::new(vec![]), Err(Error::EmptyVector)));
    }

    #[test]
    fn dataset_rejects_media_spanning_templates() {
        let a = sample(0, 5, Modality::Image, &[1.0]);
        let mut b = sample(1, 5, Modality::Image, &[1.0]);
        b.template_id = 99;
        assert!(Dataset::new(vec![a, b], "").is_err());
    }

    #[test]
    fn template_attributes_fall_back_to_unknown_on_disagreement() {
        let mut a = sample(0, 0, Modality::Image, &[1.0, 0.0]);
        a.attributes = AttributeRecord::new(Gender::Male, Some(1)).unwrap();
        let mut b = sample(1, 1, Modality::Image, &[0.0, 1.0]);
        b.attributes = AttributeRecord::new(Gender::Male, Some(3)).unwrap();
        let t = template_from_samples(&[a, b], false).unwrap();
        assert_eq!(t.attributes.gender, Gender::Male);
        assert_eq!(t.attributes.skin_tone, None);
    }
}
