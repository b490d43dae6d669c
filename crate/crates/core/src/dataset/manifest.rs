use super::schema::AnnotationRecord;
use super::stats::DistributionStats;
use super::DatasetError;
use crate::label::{derive_flank, Decider, DerivationConfig, FlankLabel, Side, Strategy};
use crate::raster::{crop_bbox, resize_bilinear};
use crate::skeleton::SkeletonMap;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
}

/// One labeled crop. Serialized as a flat JSON object per manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub annotation_id: String,
    pub crop_path: PathBuf,
    pub label: Side,
    pub species: String,
    pub source_id: String,
    pub split: Split,
    pub strategy: Strategy,
    pub decided_by: Option<Decider>,
    pub front_min: Option<f64>,
    pub front_max: Option<f64>,
    pub back_min: Option<f64>,
    pub back_max: Option<f64>,
    pub front_stat: Option<f64>,
    pub back_stat: Option<f64>,
}

impl ManifestEntry {
    pub fn from_label(record: &AnnotationRecord, label: &FlankLabel<f64>, side: Side, crop_path: PathBuf) -> Self {
        Self {
            annotation_id: record.annotation_id.clone(),
            crop_path,
            label: side,
            species: record.species.clone(),
            source_id: record.source_id.clone(),
            split: Split::Train,
            strategy: label.strategy,
            decided_by: label.decided_by,
            front_min: label.front_interval.map(|i| i.0),
            front_max: label.front_interval.map(|i| i.1),
            back_min: label.back_interval.map(|i| i.0),
            back_max: label.back_interval.map(|i| i.1),
            front_stat: label.deciding.map(|d| d.0),
            back_stat: label.deciding.map(|d| d.1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            (a.source_id.as_str(), a.annotation_id.as_str()).cmp(&(b.source_id.as_str(), b.annotation_id.as_str()))
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSON lines with crop paths written relative to `base` when they lie
    /// below it and absolute otherwise.
    pub fn to_jsonl(&self, base: &Path) -> String {
        let base = absolute(base);
        let mut out = String::new();
        for entry in &self.entries {
            let mut e = entry.clone();
            let crop = absolute(&e.crop_path);
            e.crop_path = match crop.strip_prefix(&base) {
                Ok(rel) => rel.to_path_buf(),
                Err(_) => crop,
            };
            out.push_str(&serde_json::to_string(&e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON lines, resolving relative crop paths against `base`.
    pub fn from_jsonl(text: &str, base: &Path) -> Result<Self, DatasetError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| DatasetError::Manifest {
                line: i + 1,
                message: err.to_string(),
            })?;
            if e.crop_path.is_relative() {
                e.crop_path = base.join(&e.crop_path);
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let base = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.to_jsonl(base)).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_jsonl(&text, &absolute(path.parent().unwrap_or(Path::new(""))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub derivation: DerivationConfig,
    pub target_size: u32,
    /// Context added around each box, as a fraction of its size per side.
    pub margin: f64,
    pub images_root: PathBuf,
    pub crop_dir: PathBuf,
}

/// A record skipped because its image could not be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub source_id: String,
    pub annotation_id: String,
    pub message: String,
}

fn file_stem_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-._".contains(c) { c } else { '_' })
        .collect()
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn crop_file_name(source_id: &str, annotation_id: &str) -> String {
    format!("{}_{}.png", file_stem_safe(source_id), file_stem_safe(annotation_id))
}

/// Derives labels for every record, writes one resized crop per labeled
/// record and returns the sorted manifest with its distribution statistics.
pub fn build_manifest(
    records: &[AnnotationRecord],
    map: &SkeletonMap,
    options: &BuildOptions,
) -> Result<(DatasetManifest, DistributionStats, Vec<RecordFailure>), DatasetError> {
    if options.target_size == 0 {
        return Err(DatasetError::ZeroTargetSize);
    }
    fs::create_dir_all(&options.crop_dir).map_err(|e| DatasetError::Io {
        path: options.crop_dir.clone(),
        message: e.to_string(),
    })?;

    let mut order: Vec<&AnnotationRecord> = records.iter().collect();
    order.sort_by(|a, b| (&a.source_id, &a.annotation_id).cmp(&(&b.source_id, &b.annotation_id)));

    let mut manifest = DatasetManifest::default();
    let mut stats = DistributionStats::default();
    let mut failures = Vec::new();
    let mut written = Vec::new();
    let mut cached: Option<(PathBuf, Result<RgbImage, String>)> = None;

    for record in order {
        let label = derive_flank(&record.keypoints, map, &options.derivation);
        let Some(side) = label.value.side() else {
            stats.source_mut(&record.source_id).record(label.value, label.undefined_reason);
            continue;
        };

        let image_path = options.images_root.join(&record.image_path);
        if cached.as_ref().map(|(p, _)| p != &image_path).unwrap_or(true) {
            let loaded = image::open(&image_path)
                .map(|i| i.to_rgb8())
                .map_err(|e| format!("cannot read {}: {e}", image_path.display()));
            cached = Some((image_path.clone(), loaded));
        }
        let image = match &cached.as_ref().expect("image cached").1 {
            Ok(img) => img,
            Err(message) => {
                stats.source_mut(&record.source_id).errors += 1;
                failures.push(RecordFailure {
                    source_id: record.source_id.clone(),
                    annotation_id: record.annotation_id.clone(),
                    message: message.clone(),
                });
                continue;
            }
        };
        let crop = crop_bbox(image, &record.bbox.with_margin(options.margin))
            .and_then(|c| resize_bilinear(&c, options.target_size, options.target_size));
        let crop = match crop {
            Ok(c) => c,
            Err(e) => {
                stats.source_mut(&record.source_id).errors += 1;
                failures.push(RecordFailure {
                    source_id: record.source_id.clone(),
                    annotation_id: record.annotation_id.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let crop_path = options
            .crop_dir
            .join(crop_file_name(&record.source_id, &record.annotation_id));
        if let Err(e) = crop.save_with_format(&crop_path, image::ImageFormat::Png) {
            return Err(DatasetError::WriteFailed {
                path: crop_path,
                message: e.to_string(),
                written,
            });
        }
        written.push(crop_path.clone());
        stats.source_mut(&record.source_id).record(label.value, None);
        manifest
            .entries
            .push(ManifestEntry::from_label(record, &label, side, crop_path));
    }
    manifest.sort();
    Ok((manifest, stats, failures))
}
