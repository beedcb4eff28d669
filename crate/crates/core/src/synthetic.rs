//! Synthetic datasets with planted attribute structure.
//!
//! Within each class every primary has its own popularity order over the
//! secondaries. Most images draw each primary's secondary from a Zipf law
//! over that order; a `rare_fraction` of images instead take a tail
//! secondary on every primary at once, planting rare combinations.
//!
//! [`Fixture`] turns the planted annotations into embeddings: random unit
//! text vectors per attribute, reference images near those vectors, image
//! embeddings near the sum of their attributes' directions, and small RGB
//! pictures for the augmentation stage.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::image_io::encode_ppm;
use crate::augment::ImageTensor;
use crate::dictionary::{AnnotatedDataset, AnnotationRecord};
use crate::embedding::{write_embeddings, EmbeddingMatrix};
use crate::error::Result;
use crate::io;
use crate::manifest::{write_manifest, DatasetManifest, ManifestEntry};
use crate::rng::SeedStream;
use crate::taxonomy::{attribute_id, save_taxonomy, AttributeTaxonomy, PrimaryAttribute};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub images_per_class: usize,
    pub primaries: usize,
    pub secondaries: usize,
    pub zipf_exponent: f64,
    pub rare_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 4 classes x 50 images, 6 primaries x 8 secondaries.
    pub fn fixture() -> Self {
        SyntheticSpec {
            classes: 4,
            images_per_class: 50,
            primaries: 6,
            secondaries: 8,
            zipf_exponent: 1.0,
            rare_fraction: 0.1,
            seed: 2024,
        }
    }

    pub fn image_count(&self) -> usize {
        self.classes * self.images_per_class
    }

    /// Names borrowed from the default taxonomy where it is large enough.
    pub fn taxonomy(&self) -> AttributeTaxonomy {
        let default = AttributeTaxonomy::default_taxonomy();
        let primaries = (0..self.primaries)
            .map(|p| {
                let base = default.primaries.get(p);
                let name = base.map_or_else(|| format!("primary{p}"), |b| b.name.clone());
                let secondaries = (0..self.secondaries)
                    .map(|s| {
                        base.and_then(|b| b.secondaries.get(s))
                            .cloned()
                            .unwrap_or_else(|| format!("{name}-{s}"))
                    })
                    .collect();
                PrimaryAttribute { name, secondaries }
            })
            .collect();
        AttributeTaxonomy::new(default.prompt_template, primaries)
            .expect("generated taxonomy is valid")
    }
}

/// Planted secondary index per (image, primary), plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub taxonomy: AttributeTaxonomy,
    pub image_ids: Vec<String>,
    pub class_labels: Vec<String>,
    /// `attributes[i][p]` indexes `taxonomy.primaries[p].secondaries`.
    pub attributes: Vec<Vec<usize>>,
    pub rare: Vec<bool>,
}

impl PlantedData {
    pub fn annotations(&self) -> AnnotatedDataset {
        let primaries: Vec<String> = self
            .taxonomy
            .primaries
            .iter()
            .map(|p| p.name.clone())
            .collect();
        let records = self
            .attributes
            .iter()
            .enumerate()
            .map(|(i, attrs)| AnnotationRecord {
                image_id: self.image_ids[i].clone(),
                class_label: self.class_labels[i].clone(),
                attributes: attrs
                    .iter()
                    .enumerate()
                    .map(|(p, &s)| self.taxonomy.primaries[p].secondaries[s].clone())
                    .collect(),
                similarities: vec![1.0; attrs.len()],
            })
            .collect();
        AnnotatedDataset::new(primaries, records).expect("planted annotations are valid")
    }
}

fn zipf_index(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c <= u * cumulative[cumulative.len() - 1])
        .min(cumulative.len() - 1)
}

pub fn planted(spec: &SyntheticSpec) -> PlantedData {
    let mut stream = SeedStream::new(spec.seed);
    let cumulative: Vec<f64> = (1..=spec.secondaries)
        .scan(0.0, |acc, k| {
            *acc += 1.0 / (k as f64).powf(spec.zipf_exponent);
            Some(*acc)
        })
        .collect();
    let tail_start = spec.secondaries / 2;

    let mut image_ids = Vec::with_capacity(spec.image_count());
    let mut class_labels = Vec::with_capacity(spec.image_count());
    let mut attributes = Vec::with_capacity(spec.image_count());
    let mut rare = Vec::with_capacity(spec.image_count());
    for c in 0..spec.classes {
        let orders: Vec<Vec<usize>> = (0..spec.primaries)
            .map(|_| {
                let mut order: Vec<usize> = (0..spec.secondaries).collect();
                order.shuffle(stream.rng());
                order
            })
            .collect();
        for _ in 0..spec.images_per_class {
            let is_rare = stream.uniform() < spec.rare_fraction;
            let attrs = orders
                .iter()
                .map(|order| {
                    let k = if is_rare && tail_start < spec.secondaries {
                        tail_start + stream.below(spec.secondaries - tail_start)
                    } else {
                        zipf_index(&cumulative, stream.uniform())
                    };
                    order[k]
                })
                .collect();
            image_ids.push(format!("img{:03}", image_ids.len()));
            class_labels.push(format!("class{c}"));
            attributes.push(attrs);
            rare.push(is_rare);
        }
    }
    PlantedData {
        taxonomy: spec.taxonomy(),
        image_ids,
        class_labels,
        attributes,
        rare,
    }
}

fn gaussian_unit(stream: &mut SeedStream, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim)
        .map(|_| StandardNormal.sample(stream.rng()))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn to_f32_unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Complete on-disk test dataset.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub planted: PlantedData,
    pub text_embeddings: EmbeddingMatrix,
    pub reference_embeddings: EmbeddingMatrix,
    pub image_embeddings: EmbeddingMatrix,
    pub manifest: DatasetManifest,
    pub pictures: Vec<ImageTensor>,
}

pub const FIXTURE_DIM: usize = 64;
pub const FIXTURE_PICTURE_SIZE: usize = 16;
const REFERENCE_NOISE: f64 = 0.3;
const DISTRACTORS: usize = 40;
const IMAGE_NOISE: f64 = 0.15;

impl Fixture {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let planted = planted(spec);
        let mut stream = SeedStream::derived(spec.seed, 1);
        let taxonomy = &planted.taxonomy;

        let directions: Vec<Vec<f64>> = (0..taxonomy.secondary_count())
            .map(|_| gaussian_unit(&mut stream, FIXTURE_DIM))
            .collect();
        let text_ids = taxonomy.pairs().map(|(p, s)| attribute_id(p, s)).collect();
        let text_rows: Vec<Vec<f32>> = directions.iter().map(|d| to_f32_unit(d)).collect();
        let text_embeddings = EmbeddingMatrix::from_rows(text_ids, &text_rows)?;

        let mut ref_rows = Vec::new();
        for d in &directions {
            let noise = gaussian_unit(&mut stream, FIXTURE_DIM);
            let v: Vec<f64> = d
                .iter()
                .zip(&noise)
                .map(|(a, b)| a + REFERENCE_NOISE * b)
                .collect();
            ref_rows.push(to_f32_unit(&v));
        }
        for _ in 0..DISTRACTORS {
            ref_rows.push(to_f32_unit(&gaussian_unit(&mut stream, FIXTURE_DIM)));
        }
        // shuffle so the match is not simply row-aligned
        ref_rows.shuffle(stream.rng());
        let ref_ids = (0..ref_rows.len()).map(|i| format!("ref{i:04}")).collect();
        let reference_embeddings = EmbeddingMatrix::from_rows(ref_ids, &ref_rows)?;

        let offsets: Vec<usize> = taxonomy
            .primaries
            .iter()
            .scan(0, |acc, p| {
                let start = *acc;
                *acc += p.secondaries.len();
                Some(start)
            })
            .collect();
        let mut image_rows = Vec::with_capacity(planted.attributes.len());
        for attrs in &planted.attributes {
            let mut v = vec![0.0; FIXTURE_DIM];
            for (p, &s) in attrs.iter().enumerate() {
                for (acc, x) in v.iter_mut().zip(&directions[offsets[p] + s]) {
                    *acc += x;
                }
            }
            let noise = gaussian_unit(&mut stream, FIXTURE_DIM);
            let scale = (attrs.len() as f64).sqrt() * IMAGE_NOISE;
            for (acc, x) in v.iter_mut().zip(&noise) {
                *acc += scale * x;
            }
            image_rows.push(to_f32_unit(&v));
        }
        let image_embeddings = EmbeddingMatrix::from_rows(planted.image_ids.clone(), &image_rows)?;

        let entries = planted
            .image_ids
            .iter()
            .zip(&planted.class_labels)
            .map(|(id, class)| ManifestEntry {
                image_id: id.clone(),
                class_label: class.clone(),
                source_path: Some(format!("images/{id}.ppm")),
            })
            .collect();
        let manifest = DatasetManifest::new(entries)?;

        let pictures = planted
            .attributes
            .iter()
            .map(|attrs| picture(attrs, spec.secondaries))
            .collect::<Result<Vec<_>>>()?;

        Ok(Fixture {
            planted,
            text_embeddings,
            reference_embeddings,
            image_embeddings,
            manifest,
            pictures,
        })
    }

    /// Writes `taxonomy.json`, `prompts.case`, `references.case`,
    /// `images.case`, `manifest.jsonl` and `images/*.ppm` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        save_taxonomy(&self.planted.taxonomy, &dir.join("taxonomy.json"))?;
        write_embeddings(&self.text_embeddings, &dir.join("prompts.case"))?;
        write_embeddings(&self.reference_embeddings, &dir.join("references.case"))?;
        write_embeddings(&self.image_embeddings, &dir.join("images.case"))?;
        write_manifest(&self.manifest, &dir.join("manifest.jsonl"))?;
        for (entry, pic) in self.manifest.entries().iter().zip(&self.pictures) {
            let rel = entry
                .source_path
                .as_deref()
                .expect("fixture entries carry paths");
            io::write_atomic(&dir.join(rel), &encode_ppm(pic))?;
        }
        Ok(())
    }
}

/// Small RGB picture: background tint from the first primary's secondary,
/// a bright square whose position follows the second primary's.
fn picture(attrs: &[usize], secondaries: usize) -> Result<ImageTensor> {
    let n = FIXTURE_PICTURE_SIZE;
    let t = attrs.first().copied().unwrap_or(0) as f32 / secondaries.max(1) as f32;
    let tint = |phase: f32| 0.15 + 0.5 * ((t + phase) % 1.0);
    let slot = attrs.get(1).copied().unwrap_or(0);
    let (cy, cx) = (2 + (slot * 5) % (n - 5), 2 + (slot * 3) % (n - 5));
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let inside = (cy..cy + 4).contains(&y) && (cx..cx + 4).contains(&x);
            for phase in [0.0f32, 0.33, 0.66] {
                data.push(if inside { 1.0 } else { tint(phase) });
            }
        }
    }
    ImageTensor::new(n, n, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{annotate_dataset, build_dictionary};

    #[test]
    fn planted_shape_and_determinism() {
        let spec = SyntheticSpec::fixture();
        let a = planted(&spec);
        assert_eq!(a.attributes.len(), 200);
        assert!(a
            .attributes
            .iter()
            .all(|v| v.len() == 6 && v.iter().all(|&s| s < 8)));
        assert_eq!(a, planted(&spec));
        let rare = a.rare.iter().filter(|&&r| r).count();
        assert!((5..=40).contains(&rare), "{rare} rare images");
    }

    #[test]
    fn taxonomy_uses_default_names() {
        let t = SyntheticSpec::fixture().taxonomy();
        assert_eq!(t.primaries[0].name, "color");
        assert_eq!(t.primaries[0].secondaries[0], "black");
        assert_eq!(t.secondary_count(), 48);
    }

    #[test]
    fn dictionary_recovers_most_planted_attributes() {
        let f = Fixture::generate(&SyntheticSpec::fixture()).unwrap();
        let dict = build_dictionary(
            &f.text_embeddings,
            &f.reference_embeddings,
            &f.planted.taxonomy,
        )
        .unwrap();
        let ann = annotate_dataset(&dict, &f.image_embeddings, &f.manifest).unwrap();
        let truth = f.planted.annotations();
        let total = ann.len() * ann.primaries().len();
        let agree: usize = ann
            .records()
            .iter()
            .zip(truth.records())
            .map(|(a, b)| {
                a.attributes
                    .iter()
                    .zip(&b.attributes)
                    .filter(|(x, y)| x == y)
                    .count()
            })
            .sum();
        assert!(agree as f64 / total as f64 > 0.9, "{agree}/{total}");
    }
}
