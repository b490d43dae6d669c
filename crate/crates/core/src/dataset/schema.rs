use super::DatasetError;
use crate::label::Keypoint;
use crate::raster::BBox;
use crate::skeleton::{normalize_name, SpeciesPolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKeypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(u64),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            Self::Text(s) => s,
            Self::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAnnotation {
    pub annotation_id: String,
    pub image_path: String,
    #[serde(default)]
    pub species: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    pub keypoints: Vec<RawKeypoint>,
}

/// Canonical per-source annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub source_id: String,
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: String,
    pub image_path: String,
    pub image_width: u32,
    pub image_height: u32,
    pub bbox: BBox,
    pub keypoints: Vec<Keypoint<f64>>,
    pub species: String,
    pub source_id: String,
}

/// Sidecar bounding boxes from an external detector, keyed by image path and
/// the annotation's position among that image's annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_path: String,
    pub index: usize,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutcome {
    pub source_id: String,
    pub records: Vec<AnnotationRecord>,
    /// Annotations rejected by the species policy, per normalized species.
    pub excluded: BTreeMap<String, usize>,
}

fn schema(index: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        index,
        message: message.into(),
    }
}

fn parse_annotation(index: usize, value: Value) -> Result<RawAnnotation, DatasetError> {
    let Value::Object(mut obj) = value else {
        return Err(schema(index, "annotation is not an object"));
    };
    if let Some(id) = obj.remove("annotation_id") {
        let id: RawId = serde_json::from_value(id).map_err(|_| schema(index, "annotation_id must be a string or integer"))?;
        obj.insert("annotation_id".into(), Value::String(id.into_string()));
    }
    if let Some(Value::Array(kps)) = obj.get("keypoints") {
        for (k, kp) in kps.iter().enumerate() {
            if serde_json::from_value::<RawKeypoint>(kp.clone()).is_err() {
                return Err(schema(index, format!("malformed keypoint {k}: expected {{name, x, y, visible}}")));
            }
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| schema(index, e.to_string()))
}

/// Fills missing boxes from detector output.
pub fn apply_detections(doc: &mut AnnotationDocument, detections: &Detections) {
    let lookup: HashMap<(&str, usize), [f64; 4]> = detections
        .detections
        .iter()
        .map(|d| ((d.image_path.as_str(), d.index), d.bbox))
        .collect();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for ann in &mut doc.annotations {
        let n = seen.entry(ann.image_path.clone()).or_insert(0);
        if ann.bbox.is_none() {
            ann.bbox = lookup.get(&(ann.image_path.as_str(), *n)).copied();
        }
        *n += 1;
    }
}

/// Parses a canonical document from JSON text, reporting the failing annotation index.
pub fn parse_document(text: &str) -> Result<AnnotationDocument, DatasetError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| DatasetError::Parse(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| DatasetError::Parse("document is not an object".into()))?;
    let source_id = match obj.remove("source_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        _ => return Err(DatasetError::Parse("missing or empty source_id".into())),
    };
    let images: Vec<ImageInfo> = match obj.remove("images") {
        Some(v) => serde_json::from_value(v).map_err(|e| DatasetError::Parse(format!("images: {e}")))?,
        None => Vec::new(),
    };
    let annotations = match obj.remove("annotations") {
        Some(Value::Array(items)) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_annotation(i, v))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(DatasetError::Parse("annotations must be an array".into())),
        None => Vec::new(),
    };
    if let Some(key) = obj.keys().next() {
        return Err(DatasetError::Parse(format!("unknown field {key:?}")));
    }
    Ok(AnnotationDocument {
        source_id,
        images,
        annotations,
    })
}

pub fn ingest_str(text: &str, policy: &SpeciesPolicy, detections: Option<&Detections>) -> Result<IngestOutcome, DatasetError> {
    let mut doc = parse_document(text)?;
    if let Some(d) = detections {
        apply_detections(&mut doc, d);
    }
    ingest(&doc, policy)
}

/// Validates a document and keeps the admissible species.
pub fn ingest(doc: &AnnotationDocument, policy: &SpeciesPolicy) -> Result<IngestOutcome, DatasetError> {
    let images: HashMap<&str, &ImageInfo> = doc.images.iter().map(|i| (i.path.as_str(), i)).collect();
    let mut outcome = IngestOutcome {
        source_id: doc.source_id.clone(),
        ..Default::default()
    };
    for (index, ann) in doc.annotations.iter().enumerate() {
        if ann.annotation_id.trim().is_empty() {
            return Err(schema(index, "empty annotation_id"));
        }
        let info = images
            .get(ann.image_path.as_str())
            .ok_or_else(|| schema(index, format!("image {:?} not listed in images", ann.image_path)))?;
        let [x, y, w, h] = ann
            .bbox
            .ok_or_else(|| schema(index, "no bounding box inline or in detections"))?;
        let bbox = BBox::new(x, y, w, h);
        if bbox.clamp(info.width, info.height).is_none() {
            return Err(schema(index, "bounding box is empty after clamping to the image"));
        }
        if let Some(k) = ann.keypoints.iter().position(|k| !k.x.is_finite() || !k.y.is_finite()) {
            return Err(schema(index, format!("keypoint {k} has non-finite coordinates")));
        }
        if !policy.species_admissible(&ann.species) {
            *outcome.excluded.entry(normalize_name(&ann.species)).or_insert(0) += 1;
            continue;
        }
        outcome.records.push(AnnotationRecord {
            annotation_id: ann.annotation_id.clone(),
            image_path: ann.image_path.clone(),
            image_width: info.width,
            image_height: info.height,
            bbox,
            keypoints: ann
                .keypoints
                .iter()
                .map(|k| Keypoint::new(k.name.clone(), k.x, k.y, k.visible))
                .collect(),
            species: ann.species.clone(),
            source_id: doc.source_id.clone(),
        });
    }
    for (species, n) in &outcome.excluded {
        log::info!("{}: excluded {n} annotations of species {species:?}", doc.source_id);
    }
    if outcome.records.is_empty() {
        log::warn!("{}: no admissible annotations", doc.source_id);
    }
    Ok(outcome)
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    keypoints: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    keypoints: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

/// Converts a COCO keypoint document. Category names become species; a
/// keypoint counts as visible when its flag is at least `min_visibility`
/// (COCO: 0 unlabeled, 1 labeled but occluded, 2 visible).
pub fn coco_to_document(text: &str, source_id: &str, min_visibility: u8) -> Result<AnnotationDocument, DatasetError> {
    let coco: CocoDocument = serde_json::from_str(text).map_err(|e| DatasetError::Parse(e.to_string()))?;
    let images: HashMap<u64, &CocoImage> = coco.images.iter().map(|i| (i.id, i)).collect();
    let categories: HashMap<u64, &CocoCategory> = coco.categories.iter().map(|c| (c.id, c)).collect();
    let mut annotations = Vec::with_capacity(coco.annotations.len());
    for (index, ann) in coco.annotations.iter().enumerate() {
        let image = images
            .get(&ann.image_id)
            .ok_or_else(|| schema(index, format!("unknown image_id {}", ann.image_id)))?;
        let category = categories
            .get(&ann.category_id)
            .ok_or_else(|| schema(index, format!("unknown category_id {}", ann.category_id)))?;
        if ann.keypoints.len() != 3 * category.keypoints.len() {
            return Err(schema(
                index,
                format!(
                    "expected {} keypoint triples, got {} values",
                    category.keypoints.len(),
                    ann.keypoints.len()
                ),
            ));
        }
        let keypoints = category
            .keypoints
            .iter()
            .zip(ann.keypoints.chunks_exact(3))
            .map(|(name, t)| RawKeypoint {
                name: name.clone(),
                x: t[0],
                y: t[1],
                visible: t[2] >= min_visibility as f64 && t[2] > 0.0,
            })
            .collect();
        annotations.push(RawAnnotation {
            annotation_id: ann.id.to_string(),
            image_path: image.file_name.clone(),
            species: category.name.clone(),
            bbox: ann.bbox,
            keypoints,
        });
    }
    Ok(AnnotationDocument {
        source_id: source_id.to_string(),
        images: coco
            .images
            .iter()
            .map(|i| ImageInfo {
                path: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
    })
}
