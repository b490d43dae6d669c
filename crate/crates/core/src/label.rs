//! Flank label derivation from the horizontal order of front and back keypoints.
//!
//! Image x grows rightward. A label of `Right` means the animal's head side
//! lies right of its tail side, so the right flank faces the camera.

use crate::scalar::Scalar;
use crate::skeleton::{normalize_name, PartitionClass, SkeletonMap};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("image width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("keypoint {index} has x = {x} outside [0, {width}]")]
    OutOfBounds { index: usize, x: f64, width: f64 },
    #[error("minimum visible keypoints per group must be at least 1")]
    InvalidMinimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint<T = f64> {
    pub name: String,
    pub x: T,
    pub y: T,
    pub visible: bool,
}

impl<T: Scalar> Keypoint<T> {
    pub fn new(name: impl Into<String>, x: T, y: T, visible: bool) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            visible,
        }
    }

    fn usable(&self) -> bool {
        self.visible && self.x.is_finite() && self.y.is_finite()
    }
}

/// Three-valued derivation outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flank {
    Left,
    Right,
    Undefined,
}

impl Flank {
    pub fn swap(self) -> Self {
        match self {
            Self::Left => Self::Right,
            Self::Right => Self::Left,
            Self::Undefined => Self::Undefined,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            Self::Left => Some(Side::Left),
            Self::Right => Some(Side::Right),
            Self::Undefined => None,
        }
    }
}

/// Binary flank label carried by datasets and predicted by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Class index for the classifier head: Left = 0, Right = 1.
    pub fn index(self) -> usize {
        match self {
            Self::Left => 0,
            Self::Right => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Self::Left
        } else {
            Self::Right
        }
    }

    pub fn swap(self) -> Self {
        match self {
            Self::Left => Self::Right,
            Self::Right => Self::Left,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Left => "left",
            Self::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Front and back x-intervals must be strictly disjoint.
    #[default]
    Strict,
    /// Head/tail anchors first, then mean paw positions.
    Anchor,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(Self::Strict),
            "anchor" => Ok(Self::Anchor),
            other => Err(format!("unknown strategy {other:?} (expected strict or anchor)")),
        }
    }
}

/// Which statistics settled the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decider {
    GroupExtremes,
    HeadTailAnchors,
    PawMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedReason {
    EmptyGroup,
    Overlap,
    AnchorTie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivationConfig {
    pub strategy: Strategy,
    pub min_visible: usize,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Strict,
            min_visible: 1,
        }
    }
}

impl DerivationConfig {
    pub fn new(strategy: Strategy, min_visible: usize) -> Result<Self, LabelError> {
        if min_visible == 0 {
            return Err(LabelError::InvalidMinimum);
        }
        Ok(Self {
            strategy,
            min_visible,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlankLabel<T = f64> {
    pub value: Flank,
    pub strategy: Strategy,
    pub decided_by: Option<Decider>,
    pub undefined_reason: Option<UndefinedReason>,
    pub front_interval: Option<(T, T)>,
    pub back_interval: Option<(T, T)>,
    /// Front and back statistics compared by the deciding rule.
    pub deciding: Option<(T, T)>,
}

fn interval<T: Scalar>(xs: &[T]) -> Option<(T, T)> {
    let mut it = xs.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::of(xs.len() as f64)
}

fn compare<T: Scalar>(front: T, back: T) -> Flank {
    if front > back {
        Flank::Right
    } else if front < back {
        Flank::Left
    } else {
        Flank::Undefined
    }
}

pub fn derive_flank<T: Scalar>(
    keypoints: &[Keypoint<T>],
    map: &SkeletonMap,
    config: &DerivationConfig,
) -> FlankLabel<T> {
    let min_visible = config.min_visible.max(1);
    let mut front = Vec::new();
    let mut back = Vec::new();
    for kp in keypoints.iter().filter(|k| k.usable()) {
        match map.classify_keypoint(&kp.name) {
            PartitionClass::Front => front.push(kp.x),
            PartitionClass::Back => back.push(kp.x),
            PartitionClass::Ignore => {}
        }
    }
    let mut label = FlankLabel {
        value: Flank::Undefined,
        strategy: config.strategy,
        decided_by: None,
        undefined_reason: None,
        front_interval: interval(&front),
        back_interval: interval(&back),
        deciding: None,
    };
    match config.strategy {
        Strategy::Strict => strict(&mut label, front.len(), back.len(), min_visible),
        Strategy::Anchor => anchor(&mut label, keypoints, map, &front, &back, min_visible),
    }
    label
}

fn strict<T: Scalar>(label: &mut FlankLabel<T>, n_front: usize, n_back: usize, min_visible: usize) {
    let (Some((f_lo, f_hi)), Some((b_lo, b_hi))) = (label.front_interval, label.back_interval) else {
        label.undefined_reason = Some(UndefinedReason::EmptyGroup);
        return;
    };
    if n_front < min_visible || n_back < min_visible {
        label.undefined_reason = Some(UndefinedReason::EmptyGroup);
    } else if f_lo > b_hi {
        label.value = Flank::Right;
        label.decided_by = Some(Decider::GroupExtremes);
        label.deciding = Some((f_lo, b_hi));
    } else if f_hi < b_lo {
        label.value = Flank::Left;
        label.decided_by = Some(Decider::GroupExtremes);
        label.deciding = Some((f_hi, b_lo));
    } else {
        label.undefined_reason = Some(UndefinedReason::Overlap);
    }
}

fn anchor<T: Scalar>(
    label: &mut FlankLabel<T>,
    keypoints: &[Keypoint<T>],
    map: &SkeletonMap,
    front: &[T],
    back: &[T],
    min_visible: usize,
) {
    let visible_x = |name: &str| {
        keypoints
            .iter()
            .find(|k| k.usable() && normalize_name(&k.name) == name)
            .map(|k| k.x)
    };
    let mut tied = false;

    if let Some(anchors) = map.priority_anchors() {
        if let (Some(head), Some(tail)) = (visible_x(&anchors.head), visible_x(&anchors.tail)) {
            match compare(head, tail) {
                Flank::Undefined => tied = true,
                value => {
                    label.value = value;
                    label.decided_by = Some(Decider::HeadTailAnchors);
                    label.deciding = Some((head, tail));
                    return;
                }
            }
        }
    }

    let collect = |names: &[String]| -> Vec<T> {
        keypoints
            .iter()
            .filter(|k| k.usable() && names.contains(&normalize_name(&k.name)))
            .map(|k| k.x)
            .collect()
    };
    let (front_paws, back_paws) = match map.paws() {
        Some(p) => (collect(&p.front), collect(&p.back)),
        None => (front.to_vec(), back.to_vec()),
    };
    if front_paws.len() >= min_visible && back_paws.len() >= min_visible {
        let (f, b) = (mean(&front_paws), mean(&back_paws));
        match compare(f, b) {
            Flank::Undefined => tied = true,
            value => {
                label.value = value;
                label.decided_by = Some(Decider::PawMeans);
                label.deciding = Some((f, b));
                return;
            }
        }
    }

    label.undefined_reason = Some(if tied {
        UndefinedReason::AnchorTie
    } else {
        UndefinedReason::EmptyGroup
    });
}

/// Reflects visible keypoints about the vertical center line of an image.
pub fn mirror_keypoints<T: Scalar>(keypoints: &[Keypoint<T>], image_width: T) -> Result<Vec<Keypoint<T>>, LabelError> {
    if !(image_width > T::zero()) {
        return Err(LabelError::InvalidWidth(image_width.as_f64()));
    }
    keypoints
        .iter()
        .enumerate()
        .map(|(index, kp)| {
            if !kp.visible {
                return Ok(kp.clone());
            }
            if !(kp.x >= T::zero() && kp.x <= image_width) {
                return Err(LabelError::OutOfBounds {
                    index,
                    x: kp.x.as_f64(),
                    width: image_width.as_f64(),
                });
            }
            Ok(Keypoint {
                x: image_width - kp.x,
                ..kp.clone()
            })
        })
        .collect()
}
