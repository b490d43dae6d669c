//! Species-exclusive splits, accuracy and confusion reports, the frozen-layer
//! sweep and result-table rendering.

use crate::dataset::{load_samples, DatasetManifest, LabeledImages, Split};
use crate::label::Side;
use crate::nn::{build_freeze_mask, train_phase, InputTensors, LayeredModel, ModelError, Phase, TrainConfig, TrainError};
use crate::nn::predict_side;
use crate::scalar::Scalar;
use crate::skeleton::normalize_name;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("holdout species set is empty")]
    EmptyHoldout,
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("frozen counts must be strictly increasing and below {layers}, got {counts:?}")]
    InvalidCounts { counts: Vec<usize>, layers: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSplit {
    pub train: DatasetManifest,
    pub validation: DatasetManifest,
    /// Holdout species that matched no entry.
    pub missing: Vec<String>,
}

/// Sends every entry of a holdout species to validation and the rest to training.
pub fn split_by_species(manifest: &DatasetManifest, holdout: &BTreeSet<String>) -> Result<SpeciesSplit, EvalError> {
    let holdout: BTreeSet<String> = holdout.iter().map(|s| normalize_name(s)).filter(|s| !s.is_empty()).collect();
    if holdout.is_empty() {
        return Err(EvalError::EmptyHoldout);
    }
    let mut split = SpeciesSplit {
        train: DatasetManifest::default(),
        validation: DatasetManifest::default(),
        missing: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for entry in &manifest.entries {
        let species = normalize_name(&entry.species);
        let mut e = entry.clone();
        if holdout.contains(&species) {
            seen.insert(species);
            e.split = Split::Validation;
            split.validation.entries.push(e);
        } else {
            e.split = Split::Train;
            split.train.entries.push(e);
        }
    }
    split.missing = holdout.difference(&seen).cloned().collect();
    for s in &split.missing {
        log::warn!("holdout species {s:?} does not occur in the manifest");
    }
    if split.train.is_empty() {
        log::warn!("species holdout leaves the training manifest empty");
    }
    Ok(split)
}

/// Confusion counts keyed as `true_pred`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub left_left: usize,
    pub left_right: usize,
    pub right_left: usize,
    pub right_right: usize,
}

impl Confusion {
    pub fn add(&mut self, truth: Side, predicted: Side) {
        match (truth, predicted) {
            (Side::Left, Side::Left) => self.left_left += 1,
            (Side::Left, Side::Right) => self.left_right += 1,
            (Side::Right, Side::Left) => self.right_left += 1,
            (Side::Right, Side::Right) => self.right_right += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.left_left + self.left_right + self.right_left + self.right_right
    }

    pub fn correct(&self) -> usize {
        self.left_left + self.right_right
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub sample_count: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
    /// Crops that could not be decoded; not part of `sample_count`.
    pub unreadable: usize,
}

impl EvalReport {
    pub fn from_confusion(dataset: &str, confusion: Confusion, unreadable: usize) -> Self {
        let n = confusion.total();
        Self {
            dataset: dataset.to_string(),
            sample_count: n,
            accuracy: if n == 0 { 0.0 } else { confusion.correct() as f64 / n as f64 },
            confusion,
            unreadable,
        }
    }
}

/// Anything that maps an input crop to `[p_left, p_right]`.
pub trait FlankPredictor: Sync {
    fn probabilities(&self, images: &LabeledImages) -> Result<Vec<[f64; 2]>, ModelError>;
}

impl<T: Scalar> FlankPredictor for LayeredModel<T> {
    fn probabilities(&self, images: &LabeledImages) -> Result<Vec<[f64; 2]>, ModelError> {
        let inputs = InputTensors::<T>::from_images(images);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.inputs.chunks(64) {
            let mut data = Vec::with_capacity(chunk.len() * self.input_len());
            for x in chunk {
                if x.len() != self.input_len() {
                    return Err(ModelError::ShapeMismatch {
                        expected: format!("{} values per sample", self.input_len()),
                        actual: format!("{}", x.len()),
                    });
                }
                data.extend_from_slice(x);
            }
            let batch = crate::nn::Tensor::from_vec(&[chunk.len(), self.in_channels(), self.input_size(), self.input_size()], data)
                .expect("batch shape");
            let probs = self.forward(&batch)?;
            out.extend(probs.data().chunks_exact(2).map(|p| [p[0].as_f64(), p[1].as_f64()]));
        }
        Ok(out)
    }
}

pub fn evaluate_images<P: FlankPredictor + ?Sized>(
    predictor: &P,
    data: &LabeledImages,
    dataset: &str,
) -> Result<EvalReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let probs = predictor.probabilities(data)?;
    let mut confusion = Confusion::default();
    for (p, truth) in probs.iter().zip(&data.labels) {
        confusion.add(*truth, predict_side(*p));
    }
    Ok(EvalReport::from_confusion(dataset, confusion, 0))
}

/// Evaluates on the crops of a manifest; unreadable crops are counted separately.
pub fn evaluate<T: Scalar>(model: &LayeredModel<T>, manifest: &DatasetManifest, dataset: &str) -> Result<EvalReport, EvalError> {
    let (images, unreadable) = load_samples(manifest, Some(model.input_size() as u32));
    for u in &unreadable {
        log::warn!("skipping {}: {}", u.crop_path.display(), u.message);
    }
    let mut report = evaluate_images(model, &images, dataset)?;
    report.unreadable = unreadable.len();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub frozen_count: usize,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub config: TrainConfig,
}

/// Retrains a clone of `base` once per frozen count, all with the same seed,
/// and records the validation accuracy of each run.
pub fn sweep_frozen<T: Scalar>(
    base: &LayeredModel<T>,
    train: &LabeledImages,
    validation: &LabeledImages,
    frozen_counts: &[usize],
    config: &TrainConfig,
) -> Result<SweepResult, EvalError> {
    let layers = base.layer_count();
    let increasing = frozen_counts.windows(2).all(|w| w[0] < w[1]);
    if !increasing || frozen_counts.iter().any(|&k| k >= layers) {
        return Err(EvalError::InvalidCounts {
            counts: frozen_counts.to_vec(),
            layers,
        });
    }
    if validation.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut points = Vec::with_capacity(frozen_counts.len());
    for &k in frozen_counts {
        let cfg = TrainConfig {
            phase: Phase::Custom(k),
            ..config.clone()
        };
        let mask = build_freeze_mask(layers, cfg.phase)?;
        let (model, _) = train_phase(base.clone(), train, &[], &mask, &cfg)?;
        let report = evaluate_images(&model, validation, "validation")?;
        log::info!("sweep: {k} frozen layers -> accuracy {:.4}", report.accuracy);
        points.push(SweepPoint {
            frozen_count: k,
            validation_accuracy: report.accuracy,
        });
    }
    Ok(SweepResult {
        points,
        config: config.clone(),
    })
}

/// `0.887` renders as `"88.70 %"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2} %", fraction * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub frozen_layers: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: Vec<f64>,
}

const MODEL_WIDTH: usize = 18;

/// Fixed-column accuracy table. The model column is 18 characters wide and
/// left-aligned; every other column is right-aligned to its header width.
pub fn results_table(validation_sets: &[&str], rows: &[ResultRow]) -> String {
    let mut headers = vec!["Frozen layers".to_string(), "Train Accuracy".to_string()];
    headers.extend(validation_sets.iter().map(|s| format!("Val {s}")));
    let mut out = String::new();
    let _ = write!(out, "{:<MODEL_WIDTH$}", "Model");
    for h in &headers {
        let _ = write!(out, " | {h}");
    }
    out.push('\n');
    for row in rows {
        let mut cells = vec![row.frozen_layers.to_string(), format_percent(row.train_accuracy)];
        cells.extend(row.validation_accuracy.iter().map(|a| format_percent(*a)));
        let _ = write!(out, "{:<MODEL_WIDTH$}", row.model);
        for (i, cell) in cells.iter().enumerate() {
            let width = headers.get(i).map(String::len).unwrap_or(cell.len());
            let _ = write!(out, " | {cell:>width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ManifestEntry;
    use crate::label::Strategy;
    use image::RgbImage;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn entry(id: usize, species: &str) -> ManifestEntry {
        ManifestEntry {
            annotation_id: id.to_string(),
            crop_path: PathBuf::from(format!("{id}.png")),
            label: if id.is_multiple_of(2) { Side::Left } else { Side::Right },
            species: species.into(),
            source_id: "s".into(),
            split: Split::Train,
            strategy: Strategy::Strict,
            decided_by: None,
            front_min: None,
            front_max: None,
            back_min: None,
            back_max: None,
            front_stat: None,
            back_stat: None,
        }
    }

    fn holdout(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn holdout_species_leave_training() {
        let species = ["leopard", "bobcat", "tiger", "dog", "Leopard"];
        let manifest = DatasetManifest {
            entries: (0..20).map(|i| entry(i, species[i % species.len()])).collect(),
        };
        let split = split_by_species(&manifest, &holdout(&["leopard", "bobcat"])).unwrap();
        assert!(split
            .train
            .entries
            .iter()
            .all(|e| !["leopard", "bobcat"].contains(&normalize_name(&e.species).as_str())));
        assert_eq!(split.validation.len(), 12);
        assert!(split.validation.entries.iter().all(|e| e.split == Split::Validation));
        assert!(split.missing.is_empty());
    }

    #[test]
    fn holdout_of_everything() {
        let manifest = DatasetManifest {
            entries: vec![entry(0, "lynx"), entry(1, "lynx")],
        };
        let split = split_by_species(&manifest, &holdout(&["lynx", "okapi"])).unwrap();
        assert!(split.train.is_empty());
        assert_eq!(split.missing, vec!["okapi".to_string()]);
        assert_eq!(split_by_species(&manifest, &holdout(&[])).unwrap_err(), EvalError::EmptyHoldout);
    }

    proptest! {
        #[test]
        fn split_partitions(species in proptest::collection::vec(0usize..6, 0..60), pick in proptest::collection::btree_set(0usize..6, 1..4)) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let manifest = DatasetManifest { entries: species.iter().enumerate().map(|(i, s)| entry(i, names[*s])).collect() };
            let hold: BTreeSet<String> = pick.iter().map(|i| names[*i].to_string()).collect();
            let split = split_by_species(&manifest, &hold).unwrap();
            prop_assert_eq!(split.train.len() + split.validation.len(), manifest.len());
            let train_species: BTreeSet<_> = split.train.entries.iter().map(|e| e.species.clone()).collect();
            let val_species: BTreeSet<_> = split.validation.entries.iter().map(|e| e.species.clone()).collect();
            prop_assert!(train_species.is_disjoint(&val_species));
            let mut ids: Vec<String> = split.train.entries.iter().chain(&split.validation.entries).map(|e| e.annotation_id.clone()).collect();
            ids.sort();
            let mut orig: Vec<String> = manifest.entries.iter().map(|e| e.annotation_id.clone()).collect();
            orig.sort();
            prop_assert_eq!(ids, orig);
        }
    }

    /// Looks up a fixed answer per sample position.
    struct Fixed(Vec<Side>);

    impl FlankPredictor for Fixed {
        fn probabilities(&self, images: &LabeledImages) -> Result<Vec<[f64; 2]>, ModelError> {
            Ok((0..images.len())
                .map(|i| match self.0[i] {
                    Side::Left => [0.9, 0.1],
                    Side::Right => [0.2, 0.8],
                })
                .collect())
        }
    }

    fn images(labels: &[Side]) -> LabeledImages {
        LabeledImages::new(labels.iter().map(|_| RgbImage::new(2, 2)).collect(), labels.to_vec())
    }

    #[test]
    fn hard_wired_predictors() {
        use Side::*;
        let labels = vec![Left, Right, Right, Left, Left, Right, Left, Right, Left, Right];
        let data = images(&labels);
        let report = evaluate_images(&Fixed(labels.clone()), &data, "d").unwrap();
        assert_eq!(report.accuracy, 1.0);
        let report = evaluate_images(&Fixed(vec![Left; 10]), &data, "d").unwrap();
        assert_eq!(report.accuracy, 0.5);

        // three wrong answers at positions 1, 4, 8
        let mut answers = labels.clone();
        for i in [1, 4, 8] {
            answers[i] = answers[i].swap();
        }
        let report = evaluate_images(&Fixed(answers.clone()), &data, "d").unwrap();
        assert_eq!(report.accuracy, 0.7);
        assert_eq!(
            report.confusion,
            Confusion { left_left: 3, left_right: 2, right_left: 1, right_right: 4 }
        );
        assert_eq!(report.sample_count, 10);

        let inverted: Vec<Side> = answers.iter().map(|s| s.swap()).collect();
        let inv = evaluate_images(&Fixed(inverted), &data, "d").unwrap();
        assert!((inv.accuracy - (1.0 - report.accuracy)).abs() < 1e-12);

        assert_eq!(
            evaluate_images(&Fixed(vec![]), &LabeledImages::default(), "d").unwrap_err(),
            EvalError::EmptyDataset
        );
    }

    #[test]
    fn ties_predict_left() {
        assert_eq!(predict_side([0.5f64, 0.5]), Side::Left);
        assert_eq!(predict_side([0.4f64, 0.6]), Side::Right);
    }

    #[test]
    fn percent_format() {
        assert_eq!(format_percent(0.887), "88.70 %");
        assert_eq!(format_percent(0.9634), "96.34 %");
        assert_eq!(format_percent(1.0), "100.00 %");
    }

    #[test]
    fn table_layout() {
        let empty = results_table(&["Leopard / Bobcat", "Lynx"], &[]);
        assert_eq!(
            empty,
            "Model              | Frozen layers | Train Accuracy | Val Leopard / Bobcat | Val Lynx\n"
        );
        let row = ResultRow {
            model: "EfficientNetV2-S".into(),
            frozen_layers: 20,
            train_accuracy: 0.9634,
            validation_accuracy: vec![0.985, 0.887],
        };
        let table = results_table(&["Leopard / Bobcat", "Lynx"], &[row]);
        assert_eq!(
            table.lines().nth(1).unwrap(),
            "EfficientNetV2-S   |            20 |        96.34 % |              98.50 % |  88.70 %"
        );
    }

    #[test]
    fn sweep_rejects_bad_counts() {
        let base: LayeredModel<f32> = crate::nn::reference_model(32, 0).unwrap();
        let data = images(&[Side::Left]);
        let cfg = TrainConfig::default();
        assert!(matches!(
            sweep_frozen(&base, &data, &data, &[2, 1], &cfg),
            Err(EvalError::InvalidCounts { .. })
        ));
        assert!(matches!(
            sweep_frozen(&base, &data, &data, &[5], &cfg),
            Err(EvalError::InvalidCounts { .. })
        ));
    }
}
