//! Layered binary classifier with per-layer freezing.

mod checkpoint;
mod model;
mod tensor;
mod train;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, CheckpointError, CHECKPOINT_VERSION, MAGIC};
pub use model::{ConvNetSpec, Gradients, Layer, LayerGrad, LayerKind, LayeredModel};
pub use tensor::Tensor;
pub use train::{predict_side, train_phase, EpochRecord, InputTensors, TrainConfig, TrainError, TrainHistory};

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unsupported input size {0}")]
    UnsupportedInput(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite activation produced by layer {layer}")]
    NumericalFailure { layer: usize },
    #[error("freeze mask invalid: {0}")]
    InvalidMask(String),
}

/// Input sizes the reference architecture is documented for.
pub const REFERENCE_INPUT_SIZES: [usize; 3] = [32, 64, 128];

/// The reference network: three conv blocks (8, 16, 32 channels), a 64-unit
/// hidden layer and the 2-way head, five layers in total.
pub fn reference_model<T: Scalar>(input_size: usize, seed: u64) -> Result<LayeredModel<T>, ModelError> {
    if !REFERENCE_INPUT_SIZES.contains(&input_size) {
        return Err(ModelError::UnsupportedInput(input_size));
    }
    LayeredModel::from_spec(&ConvNetSpec::reference(input_size), seed)
}

/// Which layers a training phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Only the head trains.
    Phase1,
    /// The first half of the layers (rounded down) stays frozen.
    Phase2,
    /// The first `k` layers stay frozen.
    Custom(usize),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Phase1 => f.write_str("phase1"),
            Self::Phase2 => f.write_str("phase2"),
            Self::Custom(k) => write!(f, "custom({k})"),
        }
    }
}

/// Per-layer flags, `true` = frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask(pub Vec<bool>);

impl FreezeMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.0[layer]
    }

    pub fn frozen_count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }

    /// Index of the earliest layer that trains.
    pub fn first_trainable(&self) -> Option<usize> {
        self.0.iter().position(|f| !f)
    }
}

pub fn build_freeze_mask(layer_count: usize, phase: Phase) -> Result<FreezeMask, ModelError> {
    if layer_count < 2 {
        return Err(ModelError::InvalidMask(format!("need at least 2 layers, got {layer_count}")));
    }
    let frozen = match phase {
        Phase::Phase1 => layer_count - 1,
        Phase::Phase2 => layer_count / 2,
        Phase::Custom(k) if k < layer_count => k,
        Phase::Custom(k) => {
            return Err(ModelError::InvalidMask(format!(
                "freezing {k} of {layer_count} layers would freeze the head"
            )))
        }
    };
    Ok(FreezeMask((0..layer_count).map(|i| i < frozen).collect()))
}
