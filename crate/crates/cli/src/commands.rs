use crate::run::Run;
use crate::{FillArg, FormatArg, Global, PhaseArg, StrategyArg};
use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use flank_core::augment::{apply_draw, draw_for, AugmentationConfig};
use flank_core::dataset::{
    apply_detections, build_manifest, coco_to_document, ingest, load_samples, parse_document, stats_report,
    BuildOptions, DatasetManifest, Detections, DistributionStats, IngestOutcome, LabeledImages, read_crop,
};
use flank_core::eval::{evaluate as evaluate_manifest, format_percent, results_table, split_by_species, sweep_frozen, ResultRow};
use flank_core::label::{derive_flank, DerivationConfig, Strategy};
use flank_core::nn::{
    build_freeze_mask, load_checkpoint, reference_model, save_checkpoint, train_phase, Phase, TrainConfig,
    TrainHistory,
};
use flank_core::raster::FillPolicy;
use flank_core::skeleton::{builtin_source, load_source_config, SourceConfig};
use flank_core::synth::synthetic_scenes;
use flank_core::Model;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub const COMMAND_NAMES: &[&str] = &[
    "fixture",
    "derive-labels",
    "build-dataset",
    "stats",
    "augment-preview",
    "train",
    "evaluate",
    "sweep",
    "split",
];

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FixtureArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 24)]
    pub count: usize,
    /// Directory below the output root.
    #[arg(long, default_value = "fixture")]
    pub dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SourceArgs {
    /// Annotation document.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Built-in source name (ap10k, animal_pose, atrw, stanford_extra, synthetic) or a TOML file.
    #[arg(long)]
    pub skeleton_map: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Canonical)]
    pub format: FormatArg,
    /// Source id for COCO input; defaults to the skeleton map's.
    #[arg(long)]
    pub source_id: Option<String>,
    /// Lowest COCO visibility flag that counts as visible.
    #[arg(long, default_value_t = 1)]
    pub min_visibility: u8,
    /// Detector boxes for annotations without one.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Strict)]
    pub strategy: StrategyArg,
    /// Visible keypoints required in each body group.
    #[arg(long, default_value_t = 1)]
    pub min_visible: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DeriveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value = "labels.stats.txt")]
    pub stats_out: PathBuf,
    #[arg(long, default_value = "labels.jsonl")]
    pub labels_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BuildArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    /// Directory the annotation image paths are relative to.
    #[arg(long)]
    pub images: PathBuf,
    /// Side length of the square crops.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Context added around each box, as a fraction of its size per side.
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value = "manifest.jsonl")]
    pub manifest_out: PathBuf,
    #[arg(long, default_value = "crops")]
    pub crops: PathBuf,
    #[arg(long, default_value = "dataset.stats.txt")]
    pub stats_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct StatsArgs {
    /// Annotation documents, one per source.
    #[arg(long, required = true, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    /// One skeleton map for all documents, or one per document.
    #[arg(long, required = true, num_args = 1..)]
    pub skeleton_map: Vec<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Canonical)]
    pub format: FormatArg,
    #[arg(long, default_value_t = 1)]
    pub min_visibility: u8,
    #[arg(long, value_enum, default_value_t = StrategyArg::Strict)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 1)]
    pub min_visible: usize,
    #[arg(long, default_value = "stats.txt")]
    pub stats_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AugmentArgs {
    #[arg(long, default_value_t = 0.8)]
    pub zoom_min: f64,
    #[arg(long, default_value_t = 1.25)]
    pub zoom_max: f64,
    /// Largest rotation drawn, in degrees (at most 90).
    #[arg(long, default_value_t = 30.0)]
    pub max_rotation: f64,
    /// Mirror half of the samples and swap their labels.
    #[arg(long)]
    pub flip_with_label_swap: bool,
    #[arg(long, value_enum, default_value_t = FillArg::Edge)]
    pub fill: FillArg,
}

impl AugmentArgs {
    fn config(&self, seed: u64) -> Result<AugmentationConfig> {
        let cfg = AugmentationConfig {
            zoom_range: (self.zoom_min, self.zoom_max),
            max_rotation_degrees: self.max_rotation,
            flip_with_label_swap: self.flip_with_label_swap,
            rng_seed: seed,
            fill: match self.fill {
                FillArg::Edge => FillPolicy::EdgeReplicate,
                FillArg::Black => FillPolicy::ConstantBlack,
            },
        };
        cfg.validate().context("augmentation")?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PreviewArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Samples to write, taken from the start of the manifest.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value = "preview")]
    pub dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifests, evaluated after every epoch.
    #[arg(long)]
    pub val_manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    pub phase: PhaseArg,
    /// Epochs per phase.
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr_phase1: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr_phase2: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint_out: PathBuf,
    #[arg(long, default_value = "history.json")]
    pub history_out: PathBuf,
    /// Augment training crops afresh every epoch.
    #[arg(long)]
    pub augment: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub augmentation: AugmentArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifests to evaluate on.
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    /// Display names of the manifests; file stems by default.
    #[arg(long, num_args = 1..)]
    pub name: Vec<String>,
    /// Training manifest; adds a result-table row when given.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Model name shown in the result table.
    #[arg(long)]
    pub model_name: Option<String>,
    /// Frozen layer count shown in the result table; half the layers by default.
    #[arg(long)]
    pub frozen_layers: Option<usize>,
    #[arg(long, default_value = "report.txt")]
    pub report_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Model every run starts from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub val_manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value = "sweep.json")]
    pub sweep_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Species sent to validation.
    #[arg(long, value_delimiter = ',', required = true)]
    pub holdout: Vec<String>,
    #[arg(long, default_value = "train.jsonl")]
    pub out_train: PathBuf,
    #[arg(long, default_value = "val.jsonl")]
    pub out_val: PathBuf,
}

fn derivation(strategy: StrategyArg, min_visible: usize) -> Result<DerivationConfig> {
    let strategy = match strategy {
        StrategyArg::Strict => Strategy::Strict,
        StrategyArg::Anchor => Strategy::Anchor,
    };
    DerivationConfig::new(strategy, min_visible).context("label")
}

fn load_source(spec: &str, run: &mut Run) -> Result<SourceConfig> {
    if let Some(source) = builtin_source(spec) {
        return Ok(source);
    }
    let path = run.input(Path::new(spec)).context("skeleton: not a built-in source name or a file")?;
    let text = fs::read_to_string(&path)?;
    load_source_config(&text).with_context(|| format!("skeleton: {}", path.display()))
}

fn read_document(
    path: &Path,
    format: FormatArg,
    source_id: &str,
    min_visibility: u8,
    run: &mut Run,
) -> Result<flank_core::dataset::AnnotationDocument> {
    let path = run.input(path)?;
    let text = fs::read_to_string(&path).with_context(|| format!("dataset: cannot read {}", path.display()))?;
    let doc = match format {
        FormatArg::Canonical => parse_document(&text),
        FormatArg::Coco => coco_to_document(&text, source_id, min_visibility),
    };
    doc.with_context(|| format!("dataset: {}", path.display()))
}

fn load_records(args: &SourceArgs, run: &mut Run) -> Result<(SourceConfig, IngestOutcome)> {
    let source = load_source(&args.skeleton_map, run)?;
    let source_id = args.source_id.clone().unwrap_or_else(|| source.map.source_id().to_string());
    let mut doc = read_document(&args.annotations, args.format, &source_id, args.min_visibility, run)?;
    if let Some(det) = &args.detections {
        let det = run.input(det)?;
        let text = fs::read_to_string(&det)?;
        let detections: Detections =
            serde_json::from_str(&text).with_context(|| format!("dataset: detections {}", det.display()))?;
        apply_detections(&mut doc, &detections);
    }
    let outcome = ingest(&doc, &source.policy).context("dataset")?;
    for (species, n) in &outcome.excluded {
        log::info!("excluded {n} annotations of species {species:?}");
    }
    Ok((source, outcome))
}

fn sibling_json(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_stats(run: &mut Run, path: &Path, stats: &DistributionStats) -> Result<String> {
    let report = stats_report(stats);
    run.write(path, &report)?;
    run.write(&sibling_json(path), serde_json::to_string_pretty(stats)? + "\n")?;
    Ok(report)
}

pub fn fixture(global: &Global, args: &FixtureArgs, run: &mut Run) -> Result<()> {
    let images = run.output_dir(&args.dir.join("images"))?;
    let doc = synthetic_scenes(&images, args.count, global.seed).context("fixture: cannot write scenes")?;
    let path = run.write(&args.dir.join("annotations.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    println!(
        "wrote {} scenes with {} annotations to {}",
        doc.images.len(),
        doc.annotations.len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LabelLine<'a> {
    source_id: &'a str,
    annotation_id: &'a str,
    species: &'a str,
    image_path: &'a str,
    #[serde(flatten)]
    label: flank_core::FlankLabel<f64>,
}

pub fn derive_labels(args: &DeriveArgs, run: &mut Run) -> Result<()> {
    let cfg = derivation(args.source.strategy, args.source.min_visible)?;
    let (source, outcome) = load_records(&args.source, run)?;
    let mut records: Vec<_> = outcome.records.iter().collect();
    records.sort_by(|a, b| (&a.source_id, &a.annotation_id).cmp(&(&b.source_id, &b.annotation_id)));
    let mut stats = DistributionStats::default();
    let mut lines = String::new();
    for r in records {
        let label = derive_flank(&r.keypoints, &source.map, &cfg);
        stats.source_mut(&r.source_id).record(label.value, label.undefined_reason);
        let line = LabelLine {
            source_id: &r.source_id,
            annotation_id: &r.annotation_id,
            species: &r.species,
            image_path: &r.image_path,
            label,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    run.write(&args.labels_out, lines)?;
    print!("{}", write_stats(run, &args.stats_out, &stats)?);
    Ok(())
}

pub fn build_dataset(args: &BuildArgs, run: &mut Run) -> Result<()> {
    let derivation = derivation(args.source.strategy, args.source.min_visible)?;
    ensure!(args.size > 0, "dataset: --size must be positive");
    ensure!(args.margin >= 0.0 && args.margin.is_finite(), "dataset: --margin must be non-negative");
    let images_root = run.input(&args.images)?;
    let (source, outcome) = load_records(&args.source, run)?;
    let manifest_path = run.output(&args.manifest_out)?;
    let crop_dir = run.output_dir(&args.crops)?;
    let opts = BuildOptions {
        derivation,
        target_size: args.size,
        margin: args.margin,
        images_root,
        crop_dir,
    };
    let (manifest, stats, failures) = build_manifest(&outcome.records, &source.map, &opts).context("dataset")?;
    for f in &failures {
        log::warn!("{}/{}: {}", f.source_id, f.annotation_id, f.message);
    }
    manifest.write(&manifest_path).context("dataset")?;
    if !failures.is_empty() {
        let path = args.manifest_out.with_extension("failures.json");
        run.write(&path, serde_json::to_string_pretty(&failures)? + "\n")?;
    }
    print!("{}", write_stats(run, &args.stats_out, &stats)?);
    println!("{} crops listed in {}", manifest.len(), manifest_path.display());
    Ok(())
}

pub fn stats(args: &StatsArgs, run: &mut Run) -> Result<()> {
    let cfg = derivation(args.strategy, args.min_visible)?;
    let maps = &args.skeleton_map;
    ensure!(
        maps.len() == 1 || maps.len() == args.annotations.len(),
        "stats: give one --skeleton-map or one per --annotations ({} maps, {} documents)",
        maps.len(),
        args.annotations.len()
    );
    let mut stats = DistributionStats::default();
    for (i, path) in args.annotations.iter().enumerate() {
        let source = load_source(&maps[if maps.len() == 1 { 0 } else { i }], run)?;
        let doc = read_document(path, args.format, source.map.source_id(), args.min_visibility, run)?;
        let outcome = ingest(&doc, &source.policy).context("dataset")?;
        for r in &outcome.records {
            let label = derive_flank(&r.keypoints, &source.map, &cfg);
            stats.source_mut(&r.source_id).record(label.value, label.undefined_reason);
        }
    }
    print!("{}", write_stats(run, &args.stats_out, &stats)?);
    Ok(())
}

fn read_manifest(path: &Path, run: &mut Run) -> Result<DatasetManifest> {
    let path = run.input(path)?;
    DatasetManifest::read(&path).with_context(|| format!("dataset: {}", path.display()))
}

pub fn augment_preview(global: &Global, args: &PreviewArgs, run: &mut Run) -> Result<()> {
    let cfg = args.augment.config(global.seed)?;
    let manifest = read_manifest(&args.manifest, run)?;
    let dir = run.output_dir(&args.dir)?;
    let mut index = String::new();
    for (i, entry) in manifest.entries.iter().take(args.count).enumerate() {
        let crop = read_crop(&entry.crop_path)
            .with_context(|| format!("dataset: crop {}", entry.crop_path.display()))?;
        let draw = draw_for(&cfg, i as u64);
        let (image, label) = apply_draw(&crop, entry.label, &draw, &cfg).context("augmentation")?;
        let name = format!("{i:04}_{}.png", label);
        image
            .save(dir.join(&name))
            .with_context(|| format!("output: cannot write {name}"))?;
        let line = serde_json::json!({
            "file": name,
            "source": entry.crop_path,
            "label_in": entry.label,
            "label_out": label,
            "draw": draw,
        });
        index.push_str(&serde_json::to_string(&line)?);
        index.push('\n');
    }
    run.write(&args.dir.join("preview.jsonl"), index)?;
    println!("wrote {} augmented samples to {}", manifest.len().min(args.count), dir.display());
    Ok(())
}

/// Loads the crops of a manifest; every crop must have the same square size.
fn load_images(manifest: &DatasetManifest, size: Option<u32>, what: &str) -> Result<(LabeledImages, u32)> {
    let size = match size {
        Some(s) => s,
        None => {
            let first = manifest
                .entries
                .first()
                .with_context(|| format!("dataset: {what} manifest is empty"))?;
            let img = read_crop(&first.crop_path)
                .with_context(|| format!("dataset: crop {}", first.crop_path.display()))?;
            ensure!(img.width() == img.height(), "dataset: crops must be square");
            img.width()
        }
    };
    let (images, bad) = load_samples(manifest, Some(size));
    for b in &bad {
        log::warn!("skipping {}: {}", b.crop_path.display(), b.message);
    }
    ensure!(!images.is_empty(), "dataset: no usable crops in the {what} manifest");
    Ok((images, size))
}

fn phase_checkpoint_name(path: &Path, phase: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{phase}.ckpt"))
}

pub fn train(global: &Global, args: &TrainArgs, run: &mut Run) -> Result<()> {
    let augmentation = if args.augment {
        Some(args.augmentation.config(global.seed)?)
    } else {
        None
    };
    let manifest = read_manifest(&args.manifest, run)?;
    let resume = args.resume.as_ref().map(|p| run.input(p)).transpose()?;
    let val_manifests = args
        .val_manifest
        .iter()
        .map(|p| read_manifest(p, run))
        .collect::<Result<Vec<_>>>()?;

    let mut model: Model = match &resume {
        Some(path) => load_checkpoint(path).with_context(|| format!("model: {}", path.display()))?,
        None => {
            let (_, size) = load_images(&manifest, None, "training")?;
            reference_model(size as usize, global.seed).context("model")?
        }
    };
    if resume.is_none() && args.phase == PhaseArg::Two {
        log::warn!("phase 2 without --resume starts from a fresh initialization");
    }
    let size = model.input_size() as u32;
    let (train, _) = load_images(&manifest, Some(size), "training")?;
    let vals = val_manifests
        .iter()
        .map(|m| load_images(m, Some(size), "validation").map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    let val_refs: Vec<&LabeledImages> = vals.iter().collect();

    let phases: &[(Phase, f64)] = match args.phase {
        PhaseArg::One => &[(Phase::Phase1, args.lr_phase1)],
        PhaseArg::Two => &[(Phase::Phase2, args.lr_phase2)],
        PhaseArg::Both => &[(Phase::Phase1, args.lr_phase1), (Phase::Phase2, args.lr_phase2)],
    };
    let mut history = TrainHistory::default();
    let mut configs = Vec::new();
    for (i, &(phase, lr)) in phases.iter().enumerate() {
        let cfg = TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch,
            learning_rate: lr,
            momentum: args.momentum,
            seed: global.seed,
            phase,
            augmentation,
        };
        let mask = build_freeze_mask(model.layer_count(), phase).context("model")?;
        log::info!("{phase}: {} of {} layers frozen", mask.frozen_count(), model.layer_count());
        let (trained, h) = train_phase(model, &train, &val_refs, &mask, &cfg).with_context(|| format!("training ({phase})"))?;
        model = trained;
        if let Some(last) = h.last() {
            println!(
                "{phase}: train accuracy {:.4}, validation {:?}",
                last.train_accuracy, last.validation_accuracy
            );
        }
        history.extend(h);
        configs.push(cfg);
        if i + 1 < phases.len() {
            let path = run.output(&phase_checkpoint_name(&args.checkpoint_out, "phase1"))?;
            save_checkpoint(&model, &path).context("model")?;
        }
    }
    let path = run.output(&args.checkpoint_out)?;
    save_checkpoint(&model, &path).context("model")?;
    let record = serde_json::json!({ "phases": configs, "history": history });
    run.write(&args.history_out, serde_json::to_string_pretty(&record)? + "\n")?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn evaluation_table(reports: &[flank_core::eval::EvalReport]) -> String {
    let mut out = String::from("Dataset | Samples | Accuracy | Left->Left | Left->Right | Right->Left | Right->Right | Unreadable\n");
    for r in reports {
        let c = &r.confusion;
        out.push_str(&format!(
            "{} | {} | {} | {} | {} | {} | {} | {}\n",
            r.dataset,
            r.sample_count,
            format_percent(r.accuracy),
            c.left_left,
            c.left_right,
            c.right_left,
            c.right_right,
            r.unreadable
        ));
    }
    out
}

pub fn evaluate(args: &EvaluateArgs, run: &mut Run) -> Result<()> {
    ensure!(
        args.name.is_empty() || args.name.len() == args.manifest.len(),
        "evaluation: give one --name per --manifest"
    );
    let ckpt = run.input(&args.checkpoint)?;
    let manifests = args
        .manifest
        .iter()
        .map(|p| read_manifest(p, run))
        .collect::<Result<Vec<_>>>()?;
    let train_manifest = args.train_manifest.as_ref().map(|p| read_manifest(p, run)).transpose()?;
    let model: Model = load_checkpoint(&ckpt).with_context(|| format!("model: {}", ckpt.display()))?;

    let names: Vec<String> = if args.name.is_empty() {
        args.manifest.iter().map(|p| stem(p)).collect()
    } else {
        args.name.clone()
    };
    let reports = manifests
        .iter()
        .zip(&names)
        .map(|(m, n)| evaluate_manifest(&model, m, n).with_context(|| format!("evaluation: {n}")))
        .collect::<Result<Vec<_>>>()?;
    let mut text = evaluation_table(&reports);
    let mut train_report = None;
    if let Some(m) = &train_manifest {
        let train = evaluate_manifest(&model, m, "train").context("evaluation: train")?;
        let row = ResultRow {
            model: args.model_name.clone().unwrap_or_else(|| stem(&args.checkpoint)),
            frozen_layers: args.frozen_layers.unwrap_or(model.layer_count() / 2),
            train_accuracy: train.accuracy,
            validation_accuracy: reports.iter().map(|r| r.accuracy).collect(),
        };
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        text.push('\n');
        text.push_str(&results_table(&refs, &[row]));
        train_report = Some(train);
    }
    run.write(&args.report_out, &text)?;
    let json = serde_json::json!({ "reports": reports, "train": train_report });
    run.write(&sibling_json(&args.report_out), serde_json::to_string_pretty(&json)? + "\n")?;
    print!("{text}");
    Ok(())
}

pub fn sweep(global: &Global, args: &SweepArgs, run: &mut Run) -> Result<()> {
    let ckpt = run.input(&args.checkpoint)?;
    let train_m = read_manifest(&args.manifest, run)?;
    let val_m = read_manifest(&args.val_manifest, run)?;
    let base: Model = load_checkpoint(&ckpt).with_context(|| format!("model: {}", ckpt.display()))?;
    let size = Some(base.input_size() as u32);
    let (train, _) = load_images(&train_m, size, "training")?;
    let (val, _) = load_images(&val_m, size, "validation")?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        momentum: args.momentum,
        seed: global.seed,
        phase: Phase::Custom(0),
        augmentation: None,
    };
    let result = sweep_frozen(&base, &train, &val, &args.counts, &cfg).context("evaluation: sweep")?;
    let mut text = String::from("Frozen layers | Validation Accuracy\n");
    for p in &result.points {
        text.push_str(&format!(
            "{:>13} | {:>19}\n",
            p.frozen_count,
            format_percent(p.validation_accuracy)
        ));
    }
    run.write(&args.sweep_out, serde_json::to_string_pretty(&result)? + "\n")?;
    run.write(&args.sweep_out.with_extension("txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn split(args: &SplitArgs, run: &mut Run) -> Result<()> {
    let manifest = read_manifest(&args.manifest, run)?;
    let holdout: BTreeSet<String> = args.holdout.iter().cloned().collect();
    let split = split_by_species(&manifest, &holdout).context("evaluation: split")?;
    if args.out_train == args.out_val {
        bail!("split: --out-train and --out-val must differ");
    }
    let train_path = run.output(&args.out_train)?;
    let val_path = run.output(&args.out_val)?;
    split.train.write(&train_path).context("dataset")?;
    split.validation.write(&val_path).context("dataset")?;
    println!(
        "{} entries: {} train, {} validation{}",
        manifest.len(),
        split.train.len(),
        split.validation.len(),
        if split.missing.is_empty() {
            String::new()
        } else {
            format!(" (no entries for {})", split.missing.join(", "))
        }
    );
    Ok(())
}
