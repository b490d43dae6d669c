//! Label-safe geometric augmentation: zoom in or out and bounded rotation.
//!
//! Horizontal flips invert the flank, so they are only available together
//! with a label swap and are off by default.

use crate::label::Side;
use crate::raster::{flip_horizontal, warp, FillPolicy};
use crate::seed::stream_rng;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotations beyond this angle may turn an animal past vertical and break its label.
pub const ROTATION_HARD_CAP_DEGREES: f64 = 90.0;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("zoom range ({low}, {high}) must satisfy 0 < low <= 1 <= high")]
    InvalidZoomRange { low: f64, high: f64 },
    #[error("max rotation {0} degrees must lie in [0, 90]")]
    InvalidMaxRotation(f64),
    #[error("zoom factor {factor} outside configured range ({low}, {high})")]
    ZoomOutOfRange { factor: f64, low: f64, high: f64 },
    #[error("rotation of {requested} degrees exceeds the cap of {cap} degrees")]
    RotationCapExceeded { requested: f64, cap: f64 },
    #[error("augmentation requires a square crop, got {width}x{height}")]
    NotSquare { width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub zoom_range: (f64, f64),
    pub max_rotation_degrees: f64,
    pub flip_with_label_swap: bool,
    pub rng_seed: u64,
    pub fill: FillPolicy,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            zoom_range: (0.8, 1.25),
            max_rotation_degrees: 30.0,
            flip_with_label_swap: false,
            rng_seed: 0,
            fill: FillPolicy::EdgeReplicate,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let (low, high) = self.zoom_range;
        if !(low > 0.0 && low <= 1.0 && high >= 1.0 && high.is_finite()) {
            return Err(AugmentError::InvalidZoomRange { low, high });
        }
        if !(0.0..=ROTATION_HARD_CAP_DEGREES).contains(&self.max_rotation_degrees) {
            return Err(AugmentError::InvalidMaxRotation(self.max_rotation_degrees));
        }
        Ok(())
    }
}

fn require_square(crop: &RgbImage) -> Result<u32, AugmentError> {
    let (width, height) = crop.dimensions();
    if width != height {
        return Err(AugmentError::NotSquare { width, height });
    }
    Ok(width)
}

/// Scales content about the image center by `factor`: values above 1 zoom in,
/// values below 1 shrink the content into the central `factor` fraction and
/// fill the border per the fill policy.
pub fn random_zoom(crop: &RgbImage, factor: f64, config: &AugmentationConfig) -> Result<RgbImage, AugmentError> {
    config.validate()?;
    let (low, high) = config.zoom_range;
    if !(factor >= low && factor <= high) {
        return Err(AugmentError::ZoomOutOfRange { factor, low, high });
    }
    let size = require_square(crop)?;
    if factor == 1.0 {
        return Ok(crop.clone());
    }
    let center = (size as f32 - 1.0) / 2.0;
    let inv = (1.0 / factor) as f32;
    Ok(warp(crop, size, size, config.fill, |i, j| {
        (center + (i - center) * inv, center + (j - center) * inv)
    }))
}

/// Rotates about the image center; positive angles turn the content
/// counterclockwise on screen.
pub fn random_rotate(crop: &RgbImage, degrees: f64, config: &AugmentationConfig) -> Result<RgbImage, AugmentError> {
    config.validate()?;
    if !(degrees.abs() <= ROTATION_HARD_CAP_DEGREES) {
        return Err(AugmentError::RotationCapExceeded {
            requested: degrees,
            cap: ROTATION_HARD_CAP_DEGREES,
        });
    }
    if degrees.abs() > config.max_rotation_degrees {
        return Err(AugmentError::RotationCapExceeded {
            requested: degrees,
            cap: config.max_rotation_degrees,
        });
    }
    let size = require_square(crop)?;
    if degrees == 0.0 {
        return Ok(crop.clone());
    }
    let center = (size as f32 - 1.0) / 2.0;
    let (sin, cos) = (degrees.to_radians() as f32).sin_cos();
    Ok(warp(crop, size, size, config.fill, |i, j| {
        let (dx, dy) = (i - center, j - center);
        (center + cos * dx - sin * dy, center + sin * dx + cos * dy)
    }))
}

/// Parameters drawn for one entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub zoom: f64,
    pub degrees: f64,
    pub flip: bool,
}

/// Deterministic draw for entry `index`, independent of every other entry.
pub fn draw_for(config: &AugmentationConfig, index: u64) -> AugmentDraw {
    let mut rng = stream_rng(config.rng_seed, index);
    let (low, high) = config.zoom_range;
    let zoom = if high > low { rng.gen_range(low..=high) } else { low };
    let max = config.max_rotation_degrees;
    let degrees = if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
    let coin: bool = rng.gen_bool(0.5);
    AugmentDraw {
        zoom,
        degrees,
        flip: config.flip_with_label_swap && coin,
    }
}

pub fn apply_draw(
    crop: &RgbImage,
    label: Side,
    draw: &AugmentDraw,
    config: &AugmentationConfig,
) -> Result<(RgbImage, Side), AugmentError> {
    let zoomed = random_zoom(crop, draw.zoom, config)?;
    let rotated = random_rotate(&zoomed, draw.degrees, config)?;
    if draw.flip {
        Ok((flip_horizontal(&rotated), label.swap()))
    } else {
        Ok((rotated, label))
    }
}

/// Augments each entry with its own draw, seeded by `rng_seed` and `first_index + position`.
pub fn augment_batch_from(
    entries: &[(RgbImage, Side)],
    config: &AugmentationConfig,
    first_index: u64,
) -> Result<Vec<(RgbImage, Side)>, AugmentError> {
    config.validate()?;
    entries
        .iter()
        .enumerate()
        .map(|(i, (crop, label))| {
            let draw = draw_for(config, first_index + i as u64);
            apply_draw(crop, *label, &draw, config)
        })
        .collect()
}

pub fn augment_batch(
    entries: &[(RgbImage, Side)],
    config: &AugmentationConfig,
) -> Result<Vec<(RgbImage, Side)>, AugmentError> {
    augment_batch_from(entries, config, 0)
}
