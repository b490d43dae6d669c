//! Annotation ingestion, crop extraction and manifest assembly.

mod manifest;
mod samples;
mod schema;
mod stats;

pub use manifest::{build_manifest, crop_file_name, BuildOptions, DatasetManifest, ManifestEntry, RecordFailure, Split};
pub use samples::{load_samples, read_crop, LabeledImages, Unreadable};
pub use schema::{
    apply_detections, coco_to_document, ingest, ingest_str, parse_document, AnnotationDocument, AnnotationRecord, Detection,
    Detections, ImageInfo, IngestOutcome, RawAnnotation, RawKeypoint,
};
pub use stats::{stats_report, DistributionStats, SourceStats};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot parse annotation document: {0}")]
    Parse(String),
    #[error("annotation {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("failed to write {path}: {message} ({} crops written before the failure)", written.len())]
    WriteFailed {
        path: PathBuf,
        message: String,
        written: Vec<PathBuf>,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("target size must be positive")]
    ZeroTargetSize,
}
