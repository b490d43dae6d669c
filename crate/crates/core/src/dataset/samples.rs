use super::manifest::DatasetManifest;
use super::DatasetError;
use crate::label::Side;
use image::RgbImage;
use std::path::{Path, PathBuf};

/// Decoded crops with their labels, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<RgbImage>,
    pub labels: Vec<Side>,
}

impl LabeledImages {
    pub fn new(images: Vec<RgbImage>, labels: Vec<Side>) -> Self {
        assert_eq!(images.len(), labels.len(), "one label per image");
        Self { images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: RgbImage, label: Side) {
        self.images.push(image);
        self.labels.push(label);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unreadable {
    pub crop_path: PathBuf,
    pub message: String,
}

/// Decodes one crop as RGB.
pub fn read_crop(path: &Path) -> Result<RgbImage, DatasetError> {
    image::open(path).map(|i| i.to_rgb8()).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads every crop referenced by a manifest; undecodable or wrongly sized
/// crops are reported instead of loaded.
pub fn load_samples(manifest: &DatasetManifest, expected_size: Option<u32>) -> (LabeledImages, Vec<Unreadable>) {
    let mut out = LabeledImages::default();
    let mut bad = Vec::new();
    for entry in &manifest.entries {
        match read_crop(&entry.crop_path) {
            Ok(img) => {
                if let Some(size) = expected_size {
                    if img.dimensions() != (size, size) {
                        bad.push(Unreadable {
                            crop_path: entry.crop_path.clone(),
                            message: format!("expected {size}x{size}, found {}x{}", img.width(), img.height()),
                        });
                        continue;
                    }
                }
                out.push(img, entry.label);
            }
            Err(e) => bad.push(Unreadable {
                crop_path: entry.crop_path.clone(),
                message: e.to_string(),
            }),
        }
    }
    (out, bad)
}
