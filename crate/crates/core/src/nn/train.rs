use super::model::{LayerGrad, LayeredModel};
use super::{build_freeze_mask, FreezeMask, ModelError, Phase};
use crate::augment::{self, AugmentError, AugmentationConfig};
use crate::dataset::LabeledImages;
use crate::label::Side;
use crate::raster::to_chw;
use crate::scalar::Scalar;
use crate::seed::{mix_seed, stream_rng};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples per gradient work unit. Fixed so the reduction order never depends on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("freeze mask has {mask} entries, model has {layers} layers")]
    MaskLength { mask: usize, layers: usize },
    #[error("freeze mask freezes the classification head")]
    HeadFrozen,
    #[error("non-finite activation in layer {layer} at epoch {epoch}, batch {batch}")]
    NumericalFailure { epoch: usize, batch: usize, layer: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub phase: Phase,
    /// Fresh augmentation draws per epoch when set.
    #[serde(default)]
    pub augmentation: Option<AugmentationConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            phase: Phase::Phase1,
            augmentation: None,
        }
    }
}

impl TrainConfig {
    /// Head-only training at learning rate 0.01.
    pub fn phase1(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Fine-tuning of the upper half at learning rate 0.001.
    pub fn phase2(seed: u64) -> Self {
        Self {
            seed,
            learning_rate: 0.001,
            phase: Phase::Phase2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if let Some(aug) = &self.augmentation {
            aug.validate()?;
        }
        Ok(())
    }

    pub fn mask_for(&self, layer_count: usize) -> Result<FreezeMask, ModelError> {
        build_freeze_mask(layer_count, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// One value per validation set, in the order supplied.
    pub validation_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn extend(&mut self, other: TrainHistory) {
        let offset = self.epochs.len();
        self.epochs.extend(other.epochs.into_iter().map(|mut e| {
            e.epoch += offset;
            e
        }));
    }
}

/// Flattened, `[0, 1]`-scaled network inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensors<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<Side>,
}

impl<T: Scalar> InputTensors<T> {
    pub fn from_images(data: &LabeledImages) -> Self {
        Self {
            inputs: data.images.iter().map(to_chw).collect(),
            labels: data.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Argmax over `[left, right]`; an exact tie predicts left.
pub fn predict_side<T: Scalar>(probs: [T; 2]) -> Side {
    if probs[1] > probs[0] {
        Side::Right
    } else {
        Side::Left
    }
}

fn probs_from<T: Scalar>(model: &LayeredModel<T>, start: usize, x: &[T]) -> Result<[T; 2], ModelError> {
    let z = model.forward_from(start, x, None)?;
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    Ok([a / (a + b), b / (a + b)])
}

fn accuracy_from<T: Scalar>(model: &LayeredModel<T>, start: usize, activations: &[Vec<T>], labels: &[Side]) -> Result<f64, ModelError> {
    if activations.is_empty() {
        return Ok(0.0);
    }
    let correct: Result<Vec<bool>, ModelError> = activations
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, y)| probs_from(model, start, x).map(|p| predict_side(p) == *y))
        .collect();
    Ok(correct?.iter().filter(|c| **c).count() as f64 / activations.len() as f64)
}

fn prefix_all<T: Scalar>(model: &LayeredModel<T>, start: usize, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>, ModelError> {
    if start == 0 {
        return Ok(inputs.to_vec());
    }
    inputs.par_iter().map(|x| model.prefix(start, x)).collect()
}

struct ChunkResult<T> {
    grads: Vec<LayerGrad<T>>,
    loss: f64,
    correct: usize,
}

/// Trains the unfrozen layers with momentum SGD. Frozen layers are never
/// written. Without online augmentation the frozen prefix is evaluated once
/// per sample and reused across epochs.
pub fn train_phase<T: Scalar>(
    mut model: LayeredModel<T>,
    train: &LabeledImages,
    validation: &[&LabeledImages],
    mask: &FreezeMask,
    config: &TrainConfig,
) -> Result<(LayeredModel<T>, TrainHistory), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let layers = model.layer_count();
    if mask.len() != layers {
        return Err(TrainError::MaskLength { mask: mask.len(), layers });
    }
    if mask.is_frozen(layers - 1) {
        return Err(TrainError::HeadFrozen);
    }
    let start = mask.first_trainable().expect("head is trainable");

    let train_inputs = InputTensors::<T>::from_images(train);
    let cached_train = match config.augmentation {
        None => Some(prefix_all(&model, start, &train_inputs.inputs)?),
        Some(_) => None,
    };
    let cached_val = validation
        .iter()
        .map(|v| {
            let t = InputTensors::<T>::from_images(v);
            prefix_all(&model, start, &t.inputs).map(|a| (a, t.labels))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut velocity: Vec<LayerGrad<T>> = model.zero_grads(start);
    let lr = T::of(config.learning_rate);
    let mu = T::of(config.momentum);
    let mut history = TrainHistory::default();
    let n = train.len();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64));

        let (augmented, labels_this_epoch) = match &config.augmentation {
            None => (None, train.labels.clone()),
            Some(aug) => {
                let aug = AugmentationConfig {
                    rng_seed: mix_seed(aug.rng_seed ^ config.seed, epoch as u64),
                    ..*aug
                };
                let pairs: Vec<_> = train.images.iter().cloned().zip(train.labels.iter().copied()).collect();
                let out = augment::augment_batch(&pairs, &aug)?;
                let labels: Vec<Side> = out.iter().map(|(_, l)| *l).collect();
                let inputs: Vec<Vec<T>> = out.iter().map(|(img, _)| to_chw(img)).collect();
                (Some(prefix_all(&model, start, &inputs)?), labels)
            }
        };
        let activations: &[Vec<T>] = match (&cached_train, &augmented) {
            (Some(c), _) => c,
            (None, Some(a)) => a,
            (None, None) => unreachable!("either cached or augmented"),
        };

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<ChunkResult<T>, ModelError>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = model.zero_grads(start);
                    let mut loss = 0.0;
                    let mut hits = 0;
                    for &i in chunk {
                        let label = labels_this_epoch[i];
                        let (l, p) = model.sample_grads(start, &activations[i], label, &mut grads)?;
                        loss += l.as_f64();
                        hits += usize::from(predict_side(p) == label);
                    }
                    Ok(ChunkResult { grads, loss, correct: hits })
                })
                .collect();
            let mut total = model.zero_grads(start);
            for r in results {
                let r = r.map_err(|e| match e {
                    ModelError::NumericalFailure { layer } => TrainError::NumericalFailure { epoch, batch: b, layer },
                    other => TrainError::Model(other),
                })?;
                LayeredModel::accumulate(&mut total, &r.grads);
                loss_sum += r.loss;
                correct += r.correct;
            }
            let inv = T::one() / T::of(batch.len() as f64);
            for (offset, (g, v)) in total.iter().zip(velocity.iter_mut()).enumerate() {
                let l = start + offset;
                if mask.is_frozen(l) {
                    continue;
                }
                let layer = &mut model.layers_mut()[l];
                for ((p, gi), vi) in layer.weight.data_mut().iter_mut().zip(&g.weight).zip(v.weight.iter_mut()) {
                    *vi = mu * *vi + *gi * inv;
                    *p -= lr * *vi;
                }
                for ((p, gi), vi) in layer.bias.data_mut().iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
                    *vi = mu * *vi + *gi * inv;
                    *p -= lr * *vi;
                }
            }
        }

        let validation_accuracy = cached_val
            .iter()
            .map(|(acts, labels)| accuracy_from(&model, start, acts, labels))
            .collect::<Result<Vec<_>, _>>()?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            validation_accuracy,
        };
        log::info!(
            "epoch {:>3}: loss {:.4} train acc {:.4} val {:?}",
            epoch + 1,
            record.train_loss,
            record.train_accuracy,
            record.validation_accuracy
        );
        history.epochs.push(record);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::super::{reference_model, to_bytes, ConvNetSpec};
    use super::*;
    use image::{Rgb, RgbImage};

    fn toy_data(n: usize, size: u32) -> LabeledImages {
        let mut data = LabeledImages::default();
        for i in 0..n {
            let side = if i % 2 == 0 { Side::Left } else { Side::Right };
            let img = RgbImage::from_fn(size, size, |x, _| {
                let lit = match side {
                    Side::Left => x < size / 2,
                    Side::Right => x >= size / 2,
                };
                let v = if lit { 200 } else { 30 } + (i % 5) as u8;
                Rgb([v, v, v])
            });
            data.push(img, side);
        }
        data
    }

    fn tiny() -> LayeredModel<f32> {
        LayeredModel::from_spec(
            &ConvNetSpec {
                input_size: 16,
                in_channels: 3,
                conv_channels: vec![4, 4],
                hidden: vec![8],
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::phase2(1).learning_rate, 0.001);
        assert_eq!(TrainConfig::default().epochs, 15);
        assert_eq!(TrainConfig::default().batch_size, 32);
    }

    #[test]
    fn precondition_errors() {
        let m = tiny();
        let data = toy_data(4, 16);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let empty = LabeledImages::default();
        let mask = cfg.mask_for(m.layer_count()).unwrap();
        assert_eq!(
            train_phase(m.clone(), &empty, &[], &mask, &cfg).unwrap_err(),
            TrainError::EmptyDataset
        );
        let short = FreezeMask(vec![false; 2]);
        assert!(matches!(
            train_phase(m.clone(), &data, &[], &short, &cfg),
            Err(TrainError::MaskLength { .. })
        ));
        // the full mask is unreachable through build_freeze_mask; a hand-built one is rejected
        let full = FreezeMask(vec![true; m.layer_count()]);
        assert_eq!(train_phase(m, &data, &[], &full, &cfg).unwrap_err(), TrainError::HeadFrozen);
    }

    #[test]
    fn frozen_layers_are_untouched() {
        let m = tiny();
        let data = toy_data(24, 16);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            phase: Phase::Phase2,
            ..Default::default()
        };
        let mask = cfg.mask_for(m.layer_count()).unwrap();
        let (trained, history) = train_phase(m.clone(), &data, &[&data], &mask, &cfg).unwrap();
        assert_eq!(history.len(), 3);
        for l in 0..m.layer_count() {
            let same = trained.layers()[l] == m.layers()[l];
            assert_eq!(same, mask.is_frozen(l), "layer {l}");
        }
    }

    #[test]
    fn loss_decreases_on_a_repeated_batch() {
        let m = tiny();
        let data = toy_data(8, 16);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 8,
            phase: Phase::Custom(0),
            ..Default::default()
        };
        let mask = cfg.mask_for(m.layer_count()).unwrap();
        let (_, history) = train_phase(m, &data, &[], &mask, &cfg).unwrap();
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
        for w in losses[..6].windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn seed_determines_result() {
        let data = toy_data(20, 16);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 6,
            phase: Phase::Custom(1),
            seed: 3,
            ..Default::default()
        };
        let mask = cfg.mask_for(4).unwrap();
        let run = || train_phase(tiny(), &data, &[&data], &mask, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(to_bytes(&a), to_bytes(&b));
        assert_eq!(ha, hb);
    }

    #[test]
    fn online_augmentation_runs_and_respects_freeze() {
        let m = tiny();
        let data = toy_data(10, 16);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            augmentation: Some(AugmentationConfig::default()),
            ..Default::default()
        };
        let mask = cfg.mask_for(m.layer_count()).unwrap();
        let (trained, _) = train_phase(m.clone(), &data, &[], &mask, &cfg).unwrap();
        assert_eq!(trained.layers()[..3], m.layers()[..3]);
        assert_ne!(trained.layers()[3], m.layers()[3]);
    }

    #[test]
    fn reference_model_trains_one_epoch() {
        let m: LayeredModel<f32> = reference_model(32, 1).unwrap();
        let data = toy_data(12, 32);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let mask = cfg.mask_for(5).unwrap();
        let (_, h) = train_phase(m, &data, &[&data], &mask, &cfg).unwrap();
        let e = &h.epochs[0];
        assert!((0.0..=1.0).contains(&e.train_accuracy));
        assert!((0.0..=1.0).contains(&e.validation_accuracy[0]));
    }
}
