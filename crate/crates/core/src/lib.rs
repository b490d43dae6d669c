//! Flank (left/right viewpoint) prediction toolkit for quadruped animals.
//!
//! The crate derives flank labels from pose keypoints, turns annotated
//! images into labeled crop datasets, augments them without corrupting the
//! label, and trains a small convolutional classifier with layer freezing.

pub mod augment;
pub mod dataset;
pub mod eval;
pub mod label;
pub mod nn;
pub mod raster;
pub mod scalar;
pub mod seed;
pub mod skeleton;
pub mod synth;

pub use label::{derive_flank, mirror_keypoints, DerivationConfig, Flank, FlankLabel, Side, Strategy};
pub use nn::{FreezeMask, LayeredModel, Phase, TrainConfig, TrainHistory};
pub use scalar::Scalar;
pub use skeleton::{PartitionClass, SkeletonMap, SpeciesPolicy};

/// Training precision.
pub type Model = LayeredModel<f32>;
/// Verification precision used by gradient checks.
pub type Model64 = LayeredModel<f64>;
pub type Keypoint = label::Keypoint<f64>;
pub type Tensor = nn::Tensor<f32>;
