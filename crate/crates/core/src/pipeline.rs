//! End-to-end orchestration: build-dict → annotate → cas → weights →
//! sample → augment → report.
//!
//! Each stage reads its inputs, computes, then writes files under the output
//! directory. Stages run sequentially; a failure is reported with the stage
//! name. All randomness derives from the configured seed:
//!
//! - sampling draws use `SeedStream::new(seed)`;
//! - batch pairing uses `SeedStream::derived(seed, 0)`;
//! - pair `k` of the batch uses `SeedStream::derived(seed, k + 1)`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::image_io::{load_image, save_png};
use crate::augment::{make_mix, pair_batch, ImageTensor, Method, MixConfig, PlanRecord};
use crate::augment::{DEFAULT_ALPHA, DEFAULT_DECAY};
use crate::cas::{
    build_frequency_table, cas_of, cas_statistics, write_scores, CasStatistics, Scope,
};
use crate::dictionary::{
    annotate_dataset, build_dictionary, write_annotations, write_dictionary, AnnotatedDataset,
};
use crate::embedding::read_embeddings;
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{read_manifest, DatasetManifest};
use crate::report::{attribute_distribution, bin_cas, compare_cas, partition_rows, write_report};
use crate::rng::{derive_seed, SeedStream};
use crate::sampler::{
    compute_schedule, format_draws, write_schedule, SamplingSchedule, DEFAULT_POWER,
};
use crate::taxonomy::load_taxonomy;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CAS_TOOLKIT_THREADS";

/// Sizes the global rayon pool from `CAS_TOOLKIT_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::invalid(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

/// Optional-field mirror of [`PipelineConfig`], used for config files and
/// flag overrides. Relative paths in a config file resolve against the
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOverrides {
    pub taxonomy: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub reference_embeddings: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub scope: Option<Scope>,
    pub power: Option<f64>,
    pub alpha: Option<f64>,
    pub decay: Option<f64>,
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub samples: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: PipelineOverrides = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.taxonomy,
            &mut cfg.text_embeddings,
            &mut cfg.reference_embeddings,
            &mut cfg.image_embeddings,
            &mut cfg.manifest,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `over` win.
    pub fn merged(self, over: PipelineOverrides) -> Self {
        PipelineOverrides {
            taxonomy: over.taxonomy.or(self.taxonomy),
            text_embeddings: over.text_embeddings.or(self.text_embeddings),
            reference_embeddings: over.reference_embeddings.or(self.reference_embeddings),
            image_embeddings: over.image_embeddings.or(self.image_embeddings),
            manifest: over.manifest.or(self.manifest),
            scope: over.scope.or(self.scope),
            power: over.power.or(self.power),
            alpha: over.alpha.or(self.alpha),
            decay: over.decay.or(self.decay),
            method: over.method.or(self.method),
            seed: over.seed.or(self.seed),
            batch_size: over.batch_size.or(self.batch_size),
            samples: over.samples.or(self.samples),
            out_dir: over.out_dir.or(self.out_dir),
        }
    }

    pub fn resolve(self) -> Result<PipelineConfig> {
        let need = |p: Option<PathBuf>, name: &str| {
            p.ok_or_else(|| Error::invalid(format!("pipeline config is missing {name}")))
        };
        let config = PipelineConfig {
            taxonomy: need(self.taxonomy, "taxonomy")?,
            text_embeddings: need(self.text_embeddings, "text_embeddings")?,
            reference_embeddings: need(self.reference_embeddings, "reference_embeddings")?,
            image_embeddings: need(self.image_embeddings, "image_embeddings")?,
            manifest: need(self.manifest, "manifest")?,
            out_dir: need(self.out_dir, "out_dir")?,
            scope: self.scope.unwrap_or_default(),
            power: self.power.unwrap_or(DEFAULT_POWER),
            alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
            decay: self.decay.unwrap_or(DEFAULT_DECAY),
            method: self.method.unwrap_or_default(),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            batch_size: self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            samples: self.samples,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub taxonomy: PathBuf,
    pub text_embeddings: PathBuf,
    pub reference_embeddings: PathBuf,
    pub image_embeddings: PathBuf,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub scope: Scope,
    pub power: f64,
    pub alpha: f64,
    pub decay: f64,
    pub method: Method,
    pub seed: u64,
    /// Draws mixed in the augment stage.
    pub batch_size: usize,
    /// Total draws; defaults to the dataset size.
    pub samples: Option<usize>,
}

impl PipelineConfig {
    /// Config for a directory laid out like the bundled fixture.
    pub fn for_fixture(fixture_dir: &Path, out_dir: &Path) -> Self {
        PipelineConfig {
            taxonomy: fixture_dir.join("taxonomy.json"),
            text_embeddings: fixture_dir.join("prompts.case"),
            reference_embeddings: fixture_dir.join("references.case"),
            image_embeddings: fixture_dir.join("images.case"),
            manifest: fixture_dir.join("manifest.jsonl"),
            out_dir: out_dir.to_path_buf(),
            scope: Scope::PerClass,
            power: DEFAULT_POWER,
            alpha: DEFAULT_ALPHA,
            decay: DEFAULT_DECAY,
            method: Method::CutMix,
            seed: DEFAULT_SEED,
            batch_size: DEFAULT_BATCH_SIZE,
            samples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for path in [
            &self.taxonomy,
            &self.text_embeddings,
            &self.reference_embeddings,
            &self.image_embeddings,
            &self.manifest,
        ] {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::invalid(format!(
                "power must be positive, got {}",
                self.power
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::invalid(format!(
                "decay must be positive, got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub images: usize,
    pub scope: Scope,
    pub power: f64,
    pub alpha: f64,
    pub method: Method,
    pub seed: u64,
    pub samples: usize,
    pub mixed_pairs: usize,
    pub augment_skipped: Option<String>,
    pub cas_before: CasStatistics,
    pub cas_after: CasStatistics,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_string());
        self.dir.join(rel)
    }
}

/// CAS statistics of a resampled dataset, with frequencies and ranks
/// recomputed on the resampled multiset.
pub fn resampled_statistics(
    annotations: &AnnotatedDataset,
    indices: &[usize],
    scope: Scope,
) -> Result<CasStatistics> {
    let resampled = annotations.resample(indices);
    let table = build_frequency_table(&resampled, scope)?;
    cas_statistics(&cas_of(&resampled, &table)?)
}

/// One-hot class distribution per manifest entry, classes in
/// first-appearance order.
pub fn one_hot_labels(manifest: &DatasetManifest) -> Vec<Vec<f64>> {
    let classes = manifest.classes();
    manifest
        .entries()
        .iter()
        .map(|e| {
            classes
                .iter()
                .map(|c| if *c == e.class_label { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn load_pictures(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    ids: &[String],
) -> Result<Option<Vec<ImageTensor>>> {
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let entry = manifest
            .get(id)
            .ok_or_else(|| Error::invalid(format!("image {id:?} is not in the manifest")))?;
        let Some(rel) = &entry.source_path else {
            return Ok(None);
        };
        out.push(load_image(&base.join(rel))?);
    }
    Ok(Some(out))
}

/// Mixes `batch` (indices into `ids`) pairwise and returns mixed images and
/// plan records.
pub fn augment_batch(
    batch: &[usize],
    ids: &[String],
    pictures: &[ImageTensor],
    labels: &[Vec<f64>],
    config: &MixConfig,
    seed: u64,
) -> Result<Vec<(ImageTensor, PlanRecord)>> {
    let pairs = pair_batch(batch, &mut SeedStream::derived(seed, 0));
    pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let pair_seed = derive_seed(seed, k as u64 + 1);
            let mut stream = SeedStream::new(pair_seed);
            let mixed = make_mix(
                config,
                &pictures[i],
                &pictures[j],
                &labels[i],
                &labels[j],
                (i, j),
                &mut stream,
            )?;
            let record = PlanRecord::new(&mixed.plan, (&ids[i], &ids[j]), pair_seed);
            Ok((mixed.image, record))
        })
        .collect()
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let mut out = Outputs {
        dir: &config.out_dir,
        written: Vec::new(),
    };

    // build-dict
    let taxonomy = load_taxonomy(&config.taxonomy).map_err(|e: Error| e.in_stage("build-dict"))?;
    let dict = (|| {
        let text = read_embeddings(&config.text_embeddings)?;
        let refs = read_embeddings(&config.reference_embeddings)?;
        build_dictionary(&text, &refs, &taxonomy)
    })()
    .map_err(|e: Error| e.in_stage("build-dict"))?;
    let (keys_path, sidecar_path) = (out.path("dictionary.case"), out.path("dictionary.json"));
    write_dictionary(&dict, &keys_path, &sidecar_path)
        .map_err(|e: Error| e.in_stage("build-dict"))?;

    // annotate
    let manifest = read_manifest(&config.manifest).map_err(|e: Error| e.in_stage("annotate"))?;
    let annotations = (|| {
        if manifest.is_empty() {
            return Err(Error::invalid("manifest has no entries"));
        }
        let images = read_embeddings(&config.image_embeddings)?;
        let annotations = annotate_dataset(&dict, &images, &manifest)?;
        write_annotations(&annotations, &out.path("annotations.jsonl"))?;
        Ok(annotations)
    })()
    .map_err(|e: Error| e.in_stage("annotate"))?;

    // cas
    let fingerprint = taxonomy.fingerprint();
    let (scores, before) = (|| {
        let table = build_frequency_table(&annotations, config.scope)?;
        let scores = cas_of(&annotations, &table)?;
        let stats = cas_statistics(&scores)?.with_fingerprint(&fingerprint);
        write_scores(&scores, &out.path("cas.jsonl"))?;
        io::write_json(&out.path("stats.json"), &stats)?;
        Ok((scores, stats))
    })()
    .map_err(|e: Error| e.in_stage("cas"))?;

    // weights
    let schedule: SamplingSchedule = (|| {
        let s = compute_schedule(&scores, config.power, config.seed)?;
        write_schedule(&s, &out.path("schedule.json"))?;
        Ok(s)
    })()
    .map_err(|e: Error| e.in_stage("weights"))?;

    // sample
    let n_samples = config.samples.unwrap_or(scores.len());
    let draws = schedule.draw(n_samples);
    io::write_atomic(
        &out.path("draws.txt"),
        format_draws(&schedule, &draws, true).as_bytes(),
    )
    .map_err(|e: Error| e.in_stage("sample"))?;

    // augment
    let mix = MixConfig {
        method: config.method,
        alpha: config.alpha,
        decay: config.decay,
    };
    let ids: Vec<String> = schedule.image_ids().to_vec();
    let batch: Vec<usize> = draws.iter().copied().take(config.batch_size).collect();
    let (mixed_pairs, augment_skipped) = (|| {
        let Some(pictures) = load_pictures(&manifest, &config.manifest, &ids)? else {
            return Ok((0, Some("manifest entries lack source_path".to_string())));
        };
        let label_of = one_hot_labels(&manifest);
        let labels: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| {
                let pos = manifest
                    .entries()
                    .iter()
                    .position(|e| &e.image_id == id)
                    .unwrap();
                label_of[pos].clone()
            })
            .collect();
        let mixed = augment_batch(&batch, &ids, &pictures, &labels, &mix, config.seed)?;
        let mut plans = Vec::with_capacity(mixed.len());
        for (k, (image, plan)) in mixed.into_iter().enumerate() {
            save_png(&image, &out.path(&format!("mixed/mix_{k:04}.png")))?;
            plans.push(plan);
        }
        io::write_jsonl(&out.path("plans.jsonl"), &plans)?;
        Ok((plans.len(), None))
    })()
    .map_err(|e: Error| e.in_stage("augment"))?;

    // report
    let after = (|| {
        let after = resampled_statistics(&annotations, &draws, config.scope)?
            .with_fingerprint(&fingerprint);
        io::write_json(&out.path("resampled_stats.json"), &after)?;
        let reports = config.out_dir.join("reports");
        write_report(
            &attribute_distribution(&annotations, config.scope)?,
            &reports,
            "distribution",
        )?;
        write_report(&bin_cas(&scores)?.bins, &reports, "bins")?;
        write_report(&partition_rows(&scores)?, &reports, "partition")?;
        write_report(&compare_cas(&before, &after)?.rows(), &reports, "compare")?;
        for kind in ["distribution", "bins", "partition", "compare"] {
            out.written.push(format!("reports/{kind}.csv"));
            out.written.push(format!("reports/{kind}.json"));
        }
        Ok(after)
    })()
    .map_err(|e: Error| e.in_stage("report"))?;

    let mut artifacts = out.written;
    artifacts.push("summary.json".into());
    let summary = PipelineSummary {
        images: annotations.len(),
        scope: config.scope,
        power: config.power,
        alpha: config.alpha,
        method: config.method,
        seed: config.seed,
        samples: n_samples,
        mixed_pairs,
        augment_skipped,
        cas_before: before,
        cas_after: after,
        artifacts,
    };
    io::write_json(&config.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Power grid `start:end:step`, inclusive of both ends. Values are rounded
/// to 12 decimals so `0.5:1.5:0.1` yields exactly 0.5, 0.6, …, 1.5.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad number {s:?} in grid {spec:?}")))
    };
    let (start, end, step) = match parts.as_slice() {
        [single] => {
            let v = parse(single)?;
            (v, v, 1.0)
        }
        [a, b, c] => (parse(a)?, parse(b)?, parse(c)?),
        _ => {
            return Err(Error::invalid(format!(
                "grid {spec:?} is not start:end:step"
            )))
        }
    };
    if step.is_nan() || step <= 0.0 || end < start {
        return Err(Error::invalid(format!("grid {spec:?} is empty")));
    }
    let steps = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=steps)
        .map(|i| ((start + step * i as f64) * 1e12).round() / 1e12)
        .collect())
}

pub fn sweep_file_name(power: f64) -> String {
    format!("schedule_b{power:.2}.json")
}

/// Writes one schedule per grid value into `out_dir`.
pub fn sweep(
    scores: &[crate::cas::CasScore],
    grid: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let schedules = grid
        .iter()
        .map(|&b| compute_schedule(scores, b, seed))
        .collect::<Result<Vec<_>>>()?;
    schedules
        .iter()
        .map(|s| {
            let path = out_dir.join(sweep_file_name(s.power()));
            write_schedule(s, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.5:1.5:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[7], 1.2);
        assert_eq!(g[10], 1.5);
        assert_eq!(parse_grid("1.2").unwrap(), vec![1.2]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn overrides_precedence() {
        let file = PipelineOverrides {
            power: Some(0.8),
            seed: Some(3),
            ..Default::default()
        };
        let flags = PipelineOverrides {
            power: Some(1.5),
            ..Default::default()
        };
        let m = file.merged(flags);
        assert_eq!(m.power, Some(1.5));
        assert_eq!(m.seed, Some(3));
        assert_eq!(m.alpha, None);
    }

    #[test]
    fn missing_fields_reported() {
        let err = PipelineOverrides::default().resolve().unwrap_err();
        assert!(err.to_string().contains("taxonomy"));
    }

    #[test]
    fn sweep_names() {
        assert_eq!(sweep_file_name(0.5), "schedule_b0.50.json");
        assert_eq!(sweep_file_name(1.2), "schedule_b1.20.json");
    }
}
