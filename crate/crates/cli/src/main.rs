use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cas_core::augment::image_io::{load_image, save_png};
use cas_core::augment::{ImageTensor, Method, MixConfig, DEFAULT_ALPHA, DEFAULT_DECAY};
use cas_core::cas::{
    cas_statistics, compute_cas, read_scores, schema_fingerprint, write_scores, Scope,
};
use cas_core::dictionary::{
    annotate_dataset, build_dictionary, read_annotations, read_dictionary, write_annotations,
    write_dictionary,
};
use cas_core::embedding::read_embeddings;
use cas_core::io;
use cas_core::manifest::read_manifest;
use cas_core::pipeline::{
    augment_batch, configure_threads, one_hot_labels, parse_grid, resampled_statistics,
    run_pipeline, sweep, PipelineOverrides, DEFAULT_BATCH_SIZE, DEFAULT_SEED,
};
use cas_core::report::{
    attribute_distribution, bin_cas, bin_cas_by_class, compare_cas, partition_rows, write_report,
    ReportKind,
};
use cas_core::sampler::{
    compute_schedule, format_draws, indices_of, read_draws, read_schedule, write_schedule,
    DEFAULT_POWER,
};
use cas_core::synthetic::{Fixture, SyntheticSpec};
use cas_core::taxonomy::load_taxonomy;
use cas_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_VALIDATION: u8 = 5;

const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (unknown subcommand or flag, bad flag value)
  3  I/O error (missing or unreadable input, unwritable output)
  4  format error (malformed JSON/JSONL, CASE or image file)
  5  validation error (inputs well-formed but inconsistent)

Errors are printed to stderr as one JSON object:
  {\"error\": <kind>, \"stage\": <stage or null>, \"message\": <text>}

Set CAS_TOOLKIT_THREADS to cap the number of worker threads.";

#[derive(Parser)]
#[command(name = "cas-toolkit", version, about = "Compositional attribute scarcity analysis and CAS-weighted mix sampling", after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match each taxonomy secondary to its closest reference image embedding.
    BuildDict(BuildDictArgs),
    /// Assign one secondary per primary to every image.
    Annotate(AnnotateArgs),
    /// Compute per-image CAS and summary statistics.
    Cas(CasArgs),
    /// Turn CAS values into a sampling schedule.
    Weights(WeightsArgs),
    /// Draw image ids from a sampling schedule.
    Sample(SampleArgs),
    /// Mix drawn images pairwise and write PNGs plus a plan file.
    Augment(AugmentArgs),
    /// Write a distribution, bins, partition or compare report.
    Report(ReportArgs),
    /// Write one sampling schedule per power on a grid.
    Sweep(SweepArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
    /// Write the bundled synthetic fixture dataset.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct BuildDictArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// CASE file of prompt text embeddings, in taxonomy order.
    #[arg(long)]
    text: PathBuf,
    /// CASE file of reference image embeddings.
    #[arg(long)]
    references: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Directory holding dictionary.case and dictionary.json.
    #[arg(long)]
    dictionary: PathBuf,
    /// CASE file of image embeddings.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CasArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// per-class or global
    #[arg(long, default_value = "per-class")]
    scope: Scope,
    /// Taxonomy whose fingerprint is stamped into stats.json.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    cas: PathBuf,
    /// Power transform exponent.
    #[arg(long = "b", alias = "power", default_value_t = DEFAULT_POWER, allow_negative_numbers = true)]
    power: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    schedule: PathBuf,
    /// Number of draws; defaults to the schedule size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Manifest whose entries carry source_path.
    #[arg(long)]
    manifest: PathBuf,
    /// Draw file (one image id per line).
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, default_value = "cutmix")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// FMix spectral decay.
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    cas: PathBuf,
    /// distribution, bins, partition or compare
    #[arg(long)]
    kind: ReportKind,
    #[arg(long, default_value = "per-class")]
    scope: Scope,
    /// Bin each class over its own CAS range instead of dataset-wide.
    #[arg(long)]
    per_class_bins: bool,
    /// Draw file; required for compare, whose "after" CAS is recomputed on
    /// the resampled dataset.
    #[arg(long)]
    draws: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    cas: PathBuf,
    /// Power grid start:end:step (inclusive), or a single value.
    #[arg(long = "b", default_value = "0.5:1.5:0.1")]
    grid: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    scope: Option<Scope>,
    #[arg(long = "b", alias = "power", allow_negative_numbers = true)]
    power: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            let message = err.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report_error("usage", None, first);
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = match err.kind() {
                "io" => EXIT_IO,
                "format" => EXIT_FORMAT,
                _ => EXIT_VALIDATION,
            };
            report_error(err.kind(), err.stage(), &err.root().to_string());
            ExitCode::from(code)
        }
    }
}

fn report_error(kind: &str, stage: Option<&str>, message: &str) {
    let value = serde_json::json!({ "error": kind, "stage": stage, "message": message });
    eprintln!("{value}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildDict(a) => build_dict(a).map_err(|e| e.in_stage("build-dict")),
        Command::Annotate(a) => annotate(a).map_err(|e| e.in_stage("annotate")),
        Command::Cas(a) => cas(a).map_err(|e| e.in_stage("cas")),
        Command::Weights(a) => weights(a).map_err(|e| e.in_stage("weights")),
        Command::Sample(a) => sample(a).map_err(|e| e.in_stage("sample")),
        Command::Augment(a) => augment(a).map_err(|e| e.in_stage("augment")),
        Command::Report(a) => report(a).map_err(|e| e.in_stage("report")),
        Command::Sweep(a) => sweep_cmd(a).map_err(|e| e.in_stage("sweep")),
        Command::Pipeline(a) => pipeline(a),
        Command::Fixture(a) => Fixture::generate(&SyntheticSpec::fixture())?.write(&a.out),
    }
}

fn build_dict(a: BuildDictArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&a.taxonomy)?;
    let text = read_embeddings(&a.text)?;
    let refs = read_embeddings(&a.references)?;
    let dict = build_dictionary(&text, &refs, &taxonomy)?;
    write_dictionary(
        &dict,
        &a.out.join("dictionary.case"),
        &a.out.join("dictionary.json"),
    )?;
    println!(
        "dictionary: {} secondaries → {}",
        dict.values().len(),
        a.out.display()
    );
    Ok(())
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let dict = read_dictionary(
        &a.dictionary.join("dictionary.case"),
        &a.dictionary.join("dictionary.json"),
    )?;
    let manifest = read_manifest(&a.manifest)?;
    if manifest.is_empty() {
        return Err(Error::invalid("manifest has no entries"));
    }
    let images = read_embeddings(&a.images)?;
    let annotations = annotate_dataset(&dict, &images, &manifest)?;
    write_annotations(&annotations, &a.out.join("annotations.jsonl"))?;
    println!("annotated {} images", annotations.len());
    Ok(())
}

fn cas(a: CasArgs) -> Result<()> {
    let annotations = read_annotations(&a.annotations)?;
    let fingerprint = match &a.taxonomy {
        Some(path) => {
            let taxonomy = load_taxonomy(path)?;
            let names: Vec<String> = taxonomy
                .primary_names()
                .into_iter()
                .map(String::from)
                .collect();
            if names != annotations.primaries() {
                return Err(Error::invalid(
                    "annotation primaries do not match the taxonomy",
                ));
            }
            taxonomy.fingerprint()
        }
        None => schema_fingerprint(annotations.primaries()),
    };
    let scores = compute_cas(&annotations, a.scope)?;
    let stats = cas_statistics(&scores)?.with_fingerprint(fingerprint);
    write_scores(&scores, &a.out.join("cas.jsonl"))?;
    io::write_json(&a.out.join("stats.json"), &stats)?;
    println!(
        "cas: n={} mean={:.4} std={:.4}",
        stats.n, stats.mean, stats.std
    );
    Ok(())
}

fn weights(a: WeightsArgs) -> Result<()> {
    let scores = read_scores(&a.cas)?;
    let schedule = compute_schedule(&scores, a.power, a.seed)?;
    write_schedule(&schedule, &a.out.join("schedule.json"))
}

fn sample(a: SampleArgs) -> Result<()> {
    let schedule = read_schedule(&a.schedule)?;
    let draws = schedule.draw(a.n.unwrap_or(schedule.len()));
    io::write_atomic(
        &a.out.join("draws.txt"),
        format_draws(&schedule, &draws, true).as_bytes(),
    )
}

fn augment(a: AugmentArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let drawn = read_draws(&a.draws)?;
    let ids: Vec<String> = manifest
        .entries()
        .iter()
        .map(|e| e.image_id.clone())
        .collect();
    let batch: Vec<usize> = indices_of(&ids, &drawn)?
        .into_iter()
        .take(a.batch_size)
        .collect();
    let base = a.manifest.parent().unwrap_or(Path::new(""));
    let mut pictures: Vec<Option<ImageTensor>> = vec![None; ids.len()];
    for &i in &batch {
        if pictures[i].is_none() {
            let entry = &manifest.entries()[i];
            let rel = entry.source_path.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "manifest entry {:?} has no source_path",
                    entry.image_id
                ))
            })?;
            pictures[i] = Some(load_image(&base.join(rel))?);
        }
    }
    // unused slots are never indexed; fill them with a 1×1 placeholder
    let placeholder = ImageTensor::filled(1, 1, 3, 0.0)?;
    let pictures: Vec<ImageTensor> = pictures
        .into_iter()
        .map(|p| p.unwrap_or_else(|| placeholder.clone()))
        .collect();
    let config = MixConfig {
        method: a.method,
        alpha: a.alpha,
        decay: a.decay,
    };
    let mixed = augment_batch(
        &batch,
        &ids,
        &pictures,
        &one_hot_labels(&manifest),
        &config,
        a.seed,
    )?;
    let mut plans = Vec::with_capacity(mixed.len());
    for (k, (image, plan)) in mixed.into_iter().enumerate() {
        save_png(&image, &a.out.join(format!("mixed/mix_{k:04}.png")))?;
        plans.push(plan);
    }
    io::write_jsonl(&a.out.join("plans.jsonl"), &plans)?;
    println!("mixed {} pairs", plans.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let annotations = read_annotations(&a.annotations)?;
    let scores = read_scores(&a.cas)?;
    let ids: Vec<String> = annotations
        .records()
        .iter()
        .map(|r| r.image_id.clone())
        .collect();
    let score_ids: Vec<String> = scores.iter().map(|s| s.image_id.clone()).collect();
    if ids != score_ids {
        return Err(Error::invalid(
            "cas file and annotations list different images",
        ));
    }
    let dir = a.out.join("reports");
    let stem = a.kind.to_string();
    match a.kind {
        ReportKind::Distribution => {
            write_report(&attribute_distribution(&annotations, a.scope)?, &dir, &stem)
        }
        ReportKind::Bins if a.per_class_bins => {
            let rows: Vec<_> = bin_cas_by_class(&scores)?
                .into_values()
                .flat_map(|b| b.bins)
                .collect();
            write_report(&rows, &dir, &stem)
        }
        ReportKind::Bins => write_report(&bin_cas(&scores)?.bins, &dir, &stem),
        ReportKind::Partition => write_report(&partition_rows(&scores)?, &dir, &stem),
        ReportKind::Compare => {
            let draws_path = a
                .draws
                .as_ref()
                .ok_or_else(|| Error::invalid("compare report needs --draws"))?;
            let indices = indices_of(&ids, &read_draws(draws_path)?)?;
            let fingerprint = schema_fingerprint(annotations.primaries());
            let before = cas_statistics(&scores)?.with_fingerprint(&fingerprint);
            let after = resampled_statistics(&annotations, &indices, a.scope)?
                .with_fingerprint(&fingerprint);
            write_report(&compare_cas(&before, &after)?.rows(), &dir, &stem)
        }
    }
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let scores = read_scores(&a.cas)?;
    let written = sweep(&scores, &grid, a.seed, &a.out)?;
    println!("wrote {} schedules", written.len());
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let file = match &a.config {
        Some(path) => PipelineOverrides::from_file(path)?,
        None => PipelineOverrides::default(),
    };
    let flags = PipelineOverrides {
        taxonomy: a.taxonomy,
        text_embeddings: a.text,
        reference_embeddings: a.references,
        image_embeddings: a.images,
        manifest: a.manifest,
        scope: a.scope,
        power: a.power,
        alpha: a.alpha,
        decay: a.decay,
        method: a.method,
        seed: a.seed,
        batch_size: a.batch_size,
        samples: a.samples,
        out_dir: a.out,
    };
    let config = file.merged(flags).resolve()?;
    let summary = run_pipeline(&config)?;
    println!(
        "pipeline: {} images, cas std {:.4} → {:.4} after resampling",
        summary.images, summary.cas_before.std, summary.cas_after.std
    );
    Ok(())
}
