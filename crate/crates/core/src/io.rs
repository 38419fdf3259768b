//! On-disk formats.
//!
//! Embedding file (`FEMB`): the four magic bytes `FEMB`, then little-endian
//! `u32` version (= 1), `u32` dimension, `u64` row count, then `count * dim`
//! little-endian `f32` values in row-major order. Row `i` belongs to the
//! `i`-th metadata row.
//!
//! Metadata CSV header:
//! `sample_id,subject_id,template_id,media_id,modality,gender,skin_tone`.
//! Unknown values are empty fields, modality is `image` or `frame`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{AttributeRecord, Dataset, Embedding, Gender, Modality, Sample, Template};
use crate::error::{Error, Result};

pub const FEMB_MAGIC: [u8; 4] = *b"FEMB";
pub const FEMB_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

pub const METADATA_HEADER: [&str; 7] = [
    "sample_id",
    "subject_id",
    "template_id",
    "media_id",
    "modality",
    "gender",
    "skin_tone",
];

pub fn encode_embeddings<'a, I>(dim: usize, rows: I) -> Result<Vec<u8>>
where
    I: ExactSizeIterator<Item = &'a [f32]>,
{
    let count = rows.len();
    let mut out = Vec::with_capacity(HEADER_LEN as usize + count * dim * 4);
    out.extend_from_slice(&FEMB_MAGIC);
    out.extend_from_slice(&FEMB_VERSION.to_le_bytes());
    let dim32 = u32::try_from(dim)
        .map_err(|_| Error::InvalidInput(format!("dimension {dim} exceeds u32")))?;
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len() as u64, "truncated header"))
}

/// Returns `(dim, rows)`.
pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, Vec<Embedding>)> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len() as u64, "truncated magic"));
    }
    if bytes[..4] != FEMB_MAGIC {
        return Err(format_err(0, "bad magic, expected FEMB"));
    }
    let version = read_u32(bytes, 4)?;
    if version != FEMB_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dim = read_u32(bytes, 8)? as usize;
    if dim == 0 {
        return Err(format_err(8, "dimension must be positive"));
    }
    let count = bytes
        .get(12..20)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len() as u64, "truncated header"))?;
    let expected = (count as u128) * (dim as u128) * 4 + HEADER_LEN as u128;
    let actual = bytes.len() as u128;
    if actual < expected {
        let full_rows = (actual - HEADER_LEN as u128) / (dim as u128 * 4);
        return Err(format_err(
            bytes.len() as u64,
            format!("header declares {count} rows, only {full_rows} complete rows present"),
        ));
    }
    if actual > expected {
        return Err(format_err(expected as u64, "trailing bytes after last row"));
    }
    let mut rows = Vec::with_capacity(count as usize);
    for (r, chunk) in bytes[HEADER_LEN as usize..].chunks_exact(dim * 4).enumerate() {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let row = Embedding::new(values).map_err(|e| {
            format_err(HEADER_LEN + (r * dim * 4) as u64, format!("row {r}: {e}"))
        })?;
        rows.push(row);
    }
    Ok((dim, rows))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn encode_metadata(samples: &[Sample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METADATA_HEADER)?;
    for s in samples {
        let gender = match s.attributes.gender {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "",
        };
        w.write_record([
            s.sample_id.to_string(),
            opt(s.subject_id),
            s.template_id.to_string(),
            s.media_id.to_string(),
            s.modality.as_str().to_string(),
            gender.to_string(),
            opt(s.attributes.skin_tone),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

struct MetaRow {
    sample_id: u64,
    subject_id: Option<u32>,
    template_id: u64,
    media_id: u64,
    modality: Modality,
    attributes: AttributeRecord,
}

fn parse_metadata(bytes: &[u8]) -> Result<Vec<MetaRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers()?.clone();
    if header.iter().ne(METADATA_HEADER.iter().copied()) {
        return Err(Error::Metadata {
            line: 1,
            message: format!("expected header {}", METADATA_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |field: &str, value: &str| Error::Metadata {
            line,
            message: format!("bad {field} value {value:?}"),
        };
        let int = |i: usize| -> Result<u64> {
            rec[i].parse().map_err(|_| bad(METADATA_HEADER[i], &rec[i]))
        };
        let subject_id = match &rec[1] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("subject_id", s))?),
        };
        let modality = Modality::parse(&rec[4]).ok_or_else(|| bad("modality", &rec[4]))?;
        let gender = match &rec[5] {
            "" => Gender::Unknown,
            "male" => Gender::Male,
            "female" => Gender::Female,
            s => return Err(bad("gender", s)),
        };
        let skin_tone = match &rec[6] {
            "" => None,
            s => Some(s.parse::<u8>().map_err(|_| bad("skin_tone", s))?),
        };
        let attributes =
            AttributeRecord::new(gender, skin_tone).map_err(|_| bad("skin_tone", &rec[6]))?;
        rows.push(MetaRow {
            sample_id: int(0)?,
            subject_id,
            template_id: int(2)?,
            media_id: int(3)?,
            modality,
            attributes,
        });
    }
    Ok(rows)
}

pub fn save_dataset(dataset: &Dataset, embedding_path: &Path, metadata_path: &Path) -> Result<()> {
    let emb = encode_embeddings(
        dataset.dimension,
        dataset.samples.iter().map(|s| s.embedding.as_slice()),
    )?;
    write_file(embedding_path, &emb)?;
    write_file(metadata_path, &encode_metadata(&dataset.samples)?)
}

/// Provenance of the loaded dataset is the SHA-256 of both files.
pub fn load_dataset(embedding_path: &Path, metadata_path: &Path) -> Result<Dataset> {
    let emb_bytes = fs::read(embedding_path)?;
    let meta_bytes = fs::read(metadata_path)?;
    let (_, rows) = decode_embeddings(&emb_bytes)?;
    let meta = parse_metadata(&meta_bytes)?;
    if meta.len() != rows.len() {
        return Err(Error::Metadata {
            line: meta.len() as u64 + 1,
            message: format!(
                "{} metadata rows but {} embedding rows",
                meta.len(),
                rows.len()
            ),
        });
    }
    let samples = meta
        .into_iter()
        .zip(rows)
        .map(|(m, embedding)| Sample {
            sample_id: m.sample_id,
            subject_id: m.subject_id,
            template_id: m.template_id,
            media_id: m.media_id,
            modality: m.modality,
            attributes: m.attributes,
            embedding,
        })
        .collect();
    let mut h = Sha256::new();
    h.update(&emb_bytes);
    h.update(&meta_bytes);
    Dataset::new(samples, hex::encode(h.finalize()))
}

/// Header of the CSV that accompanies a template embedding file. Row `i`
/// of the CSV names the template owning embedding row `i`; templates with
/// several representations span consecutive rows.
pub const TEMPLATE_HEADER: [&str; 2] = ["template_id", "subject_id"];

pub fn save_templates(templates: &[Template], embedding_path: &Path, index_path: &Path) -> Result<()> {
    let dim = templates.first().ok_or(Error::EmptyInput)?.dim();
    let rows: Vec<&[f32]> = templates
        .iter()
        .flat_map(|t| t.representations().iter().map(Embedding::as_slice))
        .collect();
    write_file(embedding_path, &encode_embeddings(dim, rows.into_iter())?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TEMPLATE_HEADER)?;
    for t in templates {
        for _ in t.representations() {
            w.write_record([t.template_id.to_string(), opt(t.subject_id)])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_file(index_path, &bytes)
}

/// Templates in order of first appearance; attributes are unknown.
pub fn load_templates(embedding_path: &Path, index_path: &Path) -> Result<Vec<Template>> {
    let (_, rows) = decode_embeddings(&fs::read(embedding_path)?)?;
    let index = fs::read(index_path)?;
    let mut r = csv::Reader::from_reader(&index[..]);
    if r.headers()?.iter().ne(TEMPLATE_HEADER) {
        return Err(Error::Metadata {
            line: 1,
            message: format!("expected header {}", TEMPLATE_HEADER.join(",")),
        });
    }
    let mut groups: Vec<(u64, Option<u32>, Vec<Embedding>)> = Vec::new();
    let mut rows = rows.into_iter();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let bad = |message: String| Error::Metadata { line, message };
        let id: u64 = rec[0].parse().map_err(|_| bad(format!("bad template_id {:?}", &rec[0])))?;
        let subject = match &rec[1] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad subject_id {s:?}")))?),
        };
        let row = rows
            .next()
            .ok_or_else(|| bad("more index rows than embedding rows".into()))?;
        match groups.last_mut() {
            Some(g) if g.0 == id => g.2.push(row),
            _ => {
                if groups.iter().any(|g| g.0 == id) {
                    return Err(bad(format!("rows of template {id} are not consecutive")));
                }
                groups.push((id, subject, vec![row]));
            }
        }
    }
    if rows.next().is_some() {
        return Err(Error::Metadata {
            line: 0,
            message: "more embedding rows than index rows".into(),
        });
    }
    groups
        .into_iter()
        .map(|(id, subject, reps)| Template::new(id, subject, AttributeRecord::unknown(), reps))
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
