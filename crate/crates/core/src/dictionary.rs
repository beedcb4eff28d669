//! Visual attribute dictionary: matched image embeddings as keys, secondary
//! attributes as values.
//!
//! Building matches every attribute prompt to its most similar reference
//! image. Querying scores an image against the keys of each primary
//! attribute separately and keeps the best secondary per primary, so every
//! image receives exactly one secondary for each primary.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embedding::{
    dot_f64, norm_f64, read_embeddings, unit_vector, write_embeddings, EmbeddingMatrix,
    UNIT_NORM_TOL,
};
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::DatasetManifest;
use crate::taxonomy::{attribute_id, render_prompts, AttributeTaxonomy};

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDictionary {
    keys: EmbeddingMatrix,
    values: Vec<(String, String)>,
    matched: Vec<String>,
    groups: Vec<(String, Range<usize>)>,
    taxonomy_fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    taxonomy_fingerprint: String,
    values: Vec<(String, String)>,
    #[serde(default)]
    matched_references: Vec<String>,
}

/// Contiguous row ranges per primary, in first-appearance order.
fn group_rows(values: &[(String, String)]) -> Result<Vec<(String, Range<usize>)>> {
    let mut groups: Vec<(String, Range<usize>)> = Vec::new();
    let mut seen_pairs = HashSet::new();
    for (i, (primary, secondary)) in values.iter().enumerate() {
        if !seen_pairs.insert((primary.as_str(), secondary.as_str())) {
            return Err(Error::invalid(format!(
                "dictionary value {primary}/{secondary} appears twice"
            )));
        }
        match groups.last_mut() {
            Some((name, range)) if name == primary => range.end = i + 1,
            _ => {
                if groups.iter().any(|(name, _)| name == primary) {
                    return Err(Error::invalid(format!(
                        "dictionary rows for primary {primary:?} are not contiguous"
                    )));
                }
                groups.push((primary.clone(), i..i + 1));
            }
        }
    }
    Ok(groups)
}

impl AttributeDictionary {
    fn from_parts(
        keys: EmbeddingMatrix,
        values: Vec<(String, String)>,
        matched: Vec<String>,
        taxonomy_fingerprint: String,
    ) -> Result<Self> {
        if keys.rows() != values.len() {
            return Err(Error::invalid(format!(
                "{} dictionary keys for {} values",
                keys.rows(),
                values.len()
            )));
        }
        for (row, (p, s)) in values.iter().enumerate() {
            let expected = attribute_id(p, s);
            if keys.id(row) != expected {
                return Err(Error::invalid(format!(
                    "key row {row} has id {:?}, expected {expected:?}",
                    keys.id(row)
                )));
            }
            let norm = norm_f64(keys.row(row));
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "key {expected:?} has norm {norm}, expected 1"
                )));
            }
        }
        let groups = group_rows(&values)?;
        Ok(AttributeDictionary {
            keys,
            values,
            matched,
            groups,
            taxonomy_fingerprint,
        })
    }

    pub fn keys(&self) -> &EmbeddingMatrix {
        &self.keys
    }

    pub fn values(&self) -> &[(String, String)] {
        &self.values
    }

    /// Reference image id matched to each key row.
    pub fn matched_references(&self) -> &[String] {
        &self.matched
    }

    pub fn taxonomy_fingerprint(&self) -> &str {
        &self.taxonomy_fingerprint
    }

    pub fn dim(&self) -> usize {
        self.keys.dim()
    }

    pub fn primaries(&self) -> Vec<String> {
        self.groups.iter().map(|(name, _)| name.clone()).collect()
    }

    pub fn key_of(&self, primary: &str, secondary: &str) -> Option<&[f32]> {
        self.values
            .iter()
            .position(|(p, s)| p == primary && s == secondary)
            .map(|row| self.keys.row(row))
    }

    pub fn annotate_image(&self, image_id: &str, embedding: &[f32]) -> Result<AttributeAssignment> {
        if embedding.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: embedding.len(),
            });
        }
        let query = unit_vector(embedding, image_id)?;
        let assigned = self
            .groups
            .iter()
            .map(|(primary, rows)| {
                let mut best = rows.start;
                let mut best_sim = f64::NEG_INFINITY;
                for row in rows.clone() {
                    let sim = dot_mixed(self.keys.row(row), &query);
                    if sim > best_sim {
                        best = row;
                        best_sim = sim;
                    }
                }
                Assigned {
                    primary: primary.clone(),
                    secondary: self.values[best].1.clone(),
                    similarity: best_sim.clamp(-1.0, 1.0),
                }
            })
            .collect();
        Ok(AttributeAssignment {
            image_id: image_id.to_string(),
            assigned,
        })
    }
}

fn dot_mixed(key: &[f32], query: &[f64]) -> f64 {
    key.iter().zip(query).map(|(&k, &q)| k as f64 * q).sum()
}

/// Matches every secondary attribute's text embedding to the reference image
/// embedding with the highest cosine similarity (ties: lowest row).
pub fn build_dictionary(
    text_embeddings: &EmbeddingMatrix,
    reference_images: &EmbeddingMatrix,
    taxonomy: &AttributeTaxonomy,
) -> Result<AttributeDictionary> {
    let prompts = render_prompts(taxonomy)?;
    if text_embeddings.rows() != prompts.len() {
        return Err(Error::invalid(format!(
            "{} text embeddings for {} taxonomy secondaries",
            text_embeddings.rows(),
            prompts.len()
        )));
    }
    for (row, prompt) in prompts.iter().enumerate() {
        if text_embeddings.id(row) != prompt.id() {
            return Err(Error::invalid(format!(
                "text embedding row {row} has id {:?}, expected {:?}",
                text_embeddings.id(row),
                prompt.id()
            )));
        }
    }
    if reference_images.is_empty() {
        return Err(Error::invalid("reference image set is empty"));
    }
    if text_embeddings.dim() != reference_images.dim() {
        return Err(Error::DimensionMismatch {
            expected: text_embeddings.dim(),
            found: reference_images.dim(),
        });
    }

    let texts = text_embeddings.l2_normalize()?;
    let refs = reference_images.l2_normalize()?;

    let mut data = Vec::with_capacity(prompts.len() * refs.dim());
    let mut ids = Vec::with_capacity(prompts.len());
    let mut values = Vec::with_capacity(prompts.len());
    let mut matched = Vec::with_capacity(prompts.len());
    for (row, prompt) in prompts.iter().enumerate() {
        let text = texts.row(row);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, (_, reference)) in refs.iter_rows().enumerate() {
            let sim = dot_f64(text, reference);
            if sim > best_sim {
                best = j;
                best_sim = sim;
            }
        }
        data.extend_from_slice(refs.row(best));
        ids.push(prompt.id());
        values.push((prompt.primary.clone(), prompt.secondary.clone()));
        matched.push(refs.id(best).to_string());
    }
    let keys = EmbeddingMatrix::new(refs.dim(), data, ids)?;
    AttributeDictionary::from_parts(keys, values, matched, taxonomy.fingerprint())
}

pub fn write_dictionary(
    dict: &AttributeDictionary,
    keys_path: &Path,
    sidecar_path: &Path,
) -> Result<()> {
    let sidecar = Sidecar {
        taxonomy_fingerprint: dict.taxonomy_fingerprint.clone(),
        values: dict.values.clone(),
        matched_references: dict.matched.clone(),
    };
    write_embeddings(&dict.keys, keys_path)?;
    io::write_json(sidecar_path, &sidecar)
}

pub fn read_dictionary(keys_path: &Path, sidecar_path: &Path) -> Result<AttributeDictionary> {
    let keys = read_embeddings(keys_path)?;
    let sidecar: Sidecar = io::read_json(sidecar_path)?;
    AttributeDictionary::from_parts(
        keys,
        sidecar.values,
        sidecar.matched_references,
        sidecar.taxonomy_fingerprint,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assigned {
    pub primary: String,
    pub secondary: String,
    pub similarity: f64,
}

/// One secondary per primary for a single image, in taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeAssignment {
    pub image_id: String,
    pub assigned: Vec<Assigned>,
}

impl AttributeAssignment {
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        self.assigned
            .iter()
            .map(|a| (a.primary.as_str(), a.secondary.as_str()))
            .collect()
    }
}

/// Per-image annotation with the class label attached.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub class_label: String,
    /// Secondary per primary, aligned with `AnnotatedDataset::primaries`.
    pub attributes: Vec<String>,
    pub similarities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotatedDataset {
    primaries: Vec<String>,
    records: Vec<AnnotationRecord>,
}

impl AnnotatedDataset {
    pub fn new(primaries: Vec<String>, records: Vec<AnnotationRecord>) -> Result<Self> {
        let unique: HashSet<_> = primaries.iter().collect();
        if unique.len() != primaries.len() {
            return Err(Error::invalid("duplicate primary in annotation schema"));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.attributes.len() != primaries.len() || r.similarities.len() != primaries.len() {
                return Err(Error::invalid(format!(
                    "image {:?}: {} attributes for {} primaries",
                    r.image_id,
                    r.attributes.len(),
                    primaries.len()
                )));
            }
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate image {:?} in annotations",
                    r.image_id
                )));
            }
        }
        Ok(AnnotatedDataset { primaries, records })
    }

    pub fn primaries(&self) -> &[String] {
        &self.primaries
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds a dataset from row indices into this one, allowing repeats.
    /// Repeated images get `#k` suffixes so ids stay unique.
    pub fn resample(&self, indices: &[usize]) -> Self {
        let mut copies = vec![0usize; self.records.len()];
        let records = indices
            .iter()
            .map(|&i| {
                let mut r = self.records[i].clone();
                if copies[i] > 0 {
                    r.image_id = format!("{}#{}", r.image_id, copies[i]);
                }
                copies[i] += 1;
                r
            })
            .collect();
        AnnotatedDataset {
            primaries: self.primaries.clone(),
            records,
        }
    }
}

/// Annotates every image row. Output follows the row order of `images`.
pub fn annotate_dataset(
    dict: &AttributeDictionary,
    images: &EmbeddingMatrix,
    manifest: &DatasetManifest,
) -> Result<AnnotatedDataset> {
    if !images.is_empty() && images.dim() != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            found: images.dim(),
        });
    }
    let records = (0..images.rows())
        .into_par_iter()
        .map(|row| {
            let id = images.id(row);
            let class_label = manifest.class_of(id)?.to_string();
            let a = dict.annotate_image(id, images.row(row))?;
            Ok(AnnotationRecord {
                image_id: a.image_id,
                class_label,
                attributes: a.assigned.iter().map(|x| x.secondary.clone()).collect(),
                similarities: a.assigned.iter().map(|x| x.similarity).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotatedDataset::new(dict.primaries(), records)
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    image_id: String,
    class_label: String,
    attributes: Map<String, Value>,
    similarities: Map<String, Value>,
}

pub fn annotations_to_jsonl(data: &AnnotatedDataset) -> Vec<u8> {
    let lines: Vec<AnnotationLine> = data
        .records
        .iter()
        .map(|r| AnnotationLine {
            image_id: r.image_id.clone(),
            class_label: r.class_label.clone(),
            attributes: data
                .primaries
                .iter()
                .zip(&r.attributes)
                .map(|(p, s)| (p.clone(), Value::from(s.as_str())))
                .collect(),
            similarities: data
                .primaries
                .iter()
                .zip(&r.similarities)
                .map(|(p, &v)| (p.clone(), Value::from(v)))
                .collect(),
        })
        .collect();
    io::to_jsonl(&lines)
}

pub fn write_annotations(data: &AnnotatedDataset, path: &Path) -> Result<()> {
    io::write_atomic(path, &annotations_to_jsonl(data))
}

/// Reads annotation lines. The primary order is taken from the first line's
/// `attributes` object; later lines must carry the same primaries.
pub fn read_annotations(path: &Path) -> Result<AnnotatedDataset> {
    let lines: Vec<AnnotationLine> = io::read_jsonl(path)?;
    let primaries: Vec<String> = lines
        .first()
        .map(|l| l.attributes.keys().cloned().collect())
        .unwrap_or_default();
    let mut records = Vec::with_capacity(lines.len());
    for line in lines {
        let mut attributes = Vec::with_capacity(primaries.len());
        let mut similarities = Vec::with_capacity(primaries.len());
        if line.attributes.len() != primaries.len() {
            return Err(Error::invalid(format!(
                "image {:?}: {} attributes, expected {}",
                line.image_id,
                line.attributes.len(),
                primaries.len()
            )));
        }
        for p in &primaries {
            let s = line
                .attributes
                .get(p)
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "image {:?}: missing attribute {p:?}",
                        line.image_id
                    ))
                })?;
            attributes.push(s.to_string());
            similarities.push(
                line.similarities
                    .get(p)
                    .and_then(Value::as_f64)
                    .unwrap_or(f64::NAN),
            );
        }
        records.push(AnnotationRecord {
            image_id: line.image_id,
            class_label: line.class_label,
            attributes,
            similarities,
        });
    }
    AnnotatedDataset::new(primaries, records)
}
