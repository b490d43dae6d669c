//! Keypoint vocabularies per source dataset, their front/back partition, and
//! the species admissibility filter.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SkeletonError {
    #[error("cannot parse skeleton map: {0}")]
    Parse(String),
    #[error("skeleton map has an empty source_id")]
    EmptySourceId,
    #[error("skeleton map contains an empty keypoint name")]
    EmptyName,
    #[error("duplicate keypoint name {0:?} (names are compared case-insensitively)")]
    DuplicateName(String),
    #[error("skeleton map has no keypoint in the front class")]
    NoFrontClass,
    #[error("skeleton map has no keypoint in the back class")]
    NoBackClass,
    #[error("keypoint {name:?}: unknown partition {word:?} (expected front, back or ignore)")]
    UnknownPartition { name: String, word: String },
    #[error("anchor keypoint {0:?} is not listed in entries")]
    AnchorMissing(String),
    #[error("anchor keypoint {name:?} maps to {actual}, expected {expected}")]
    AnchorWrongClass {
        name: String,
        expected: PartitionClass,
        actual: PartitionClass,
    },
    #[error("unknown exclusion reason {0:?} (expected non-quadruped, climbing or aquatic)")]
    UnknownReason(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionClass {
    Front,
    Back,
    Ignore,
}

impl PartitionClass {
    pub fn parse(word: &str) -> Option<Self> {
        match word.trim().to_ascii_lowercase().as_str() {
            "front" => Some(Self::Front),
            "back" => Some(Self::Back),
            "ignore" => Some(Self::Ignore),
            _ => None,
        }
    }
}

impl fmt::Display for PartitionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Front => "front",
            Self::Back => "back",
            Self::Ignore => "ignore",
        })
    }
}

/// Lookup key for keypoint names.
pub fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Head and tail keypoints consulted first by the anchor-priority strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityAnchors {
    pub head: String,
    pub tail: String,
}

/// Paw keypoints used by the anchor-priority fallback tier.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PawGroups {
    #[serde(default)]
    pub front: Vec<String>,
    #[serde(default)]
    pub back: Vec<String>,
}

pub struct SkeletonMap {
    source_id: String,
    entries: BTreeMap<String, PartitionClass>,
    priority_anchors: Option<PriorityAnchors>,
    paws: Option<PawGroups>,
    warned: Mutex<BTreeSet<String>>,
}

impl Clone for SkeletonMap {
    fn clone(&self) -> Self {
        Self {
            source_id: self.source_id.clone(),
            entries: self.entries.clone(),
            priority_anchors: self.priority_anchors.clone(),
            paws: self.paws.clone(),
            warned: Mutex::new(BTreeSet::new()),
        }
    }
}

impl fmt::Debug for SkeletonMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkeletonMap")
            .field("source_id", &self.source_id)
            .field("entries", &self.entries)
            .field("priority_anchors", &self.priority_anchors)
            .field("paws", &self.paws)
            .finish()
    }
}

impl PartialEq for SkeletonMap {
    fn eq(&self, other: &Self) -> bool {
        self.source_id == other.source_id
            && self.entries == other.entries
            && self.priority_anchors == other.priority_anchors
            && self.paws == other.paws
    }
}

impl SkeletonMap {
    /// Builds and validates a map. Anchor and paw names are normalized.
    pub fn new<I, S>(
        source_id: &str,
        entries: I,
        priority_anchors: Option<PriorityAnchors>,
        paws: Option<PawGroups>,
    ) -> Result<Self, SkeletonError>
    where
        I: IntoIterator<Item = (S, PartitionClass)>,
        S: AsRef<str>,
    {
        let source_id = source_id.trim();
        if source_id.is_empty() {
            return Err(SkeletonError::EmptySourceId);
        }
        let mut map = BTreeMap::new();
        for (name, class) in entries {
            let key = normalize_name(name.as_ref());
            if key.is_empty() {
                return Err(SkeletonError::EmptyName);
            }
            if map.insert(key.clone(), class).is_some() {
                return Err(SkeletonError::DuplicateName(key));
            }
        }
        if !map.values().any(|c| *c == PartitionClass::Front) {
            return Err(SkeletonError::NoFrontClass);
        }
        if !map.values().any(|c| *c == PartitionClass::Back) {
            return Err(SkeletonError::NoBackClass);
        }

        let check = |name: &str, expected: PartitionClass| -> Result<String, SkeletonError> {
            let key = normalize_name(name);
            match map.get(&key) {
                None => Err(SkeletonError::AnchorMissing(key)),
                Some(&actual) if actual != expected => Err(SkeletonError::AnchorWrongClass {
                    name: key,
                    expected,
                    actual,
                }),
                Some(_) => Ok(key),
            }
        };
        let priority_anchors = match priority_anchors {
            Some(a) => Some(PriorityAnchors {
                head: check(&a.head, PartitionClass::Front)?,
                tail: check(&a.tail, PartitionClass::Back)?,
            }),
            None => None,
        };
        let paws = match paws {
            Some(p) => Some(PawGroups {
                front: p
                    .front
                    .iter()
                    .map(|n| check(n, PartitionClass::Front))
                    .collect::<Result<_, _>>()?,
                back: p
                    .back
                    .iter()
                    .map(|n| check(n, PartitionClass::Back))
                    .collect::<Result<_, _>>()?,
            }),
            None => None,
        };

        Ok(Self {
            source_id: source_id.to_string(),
            entries: map,
            priority_anchors,
            paws,
            warned: Mutex::new(BTreeSet::new()),
        })
    }

    /// The generic vocabulary with the example members of each body class.
    pub fn generic() -> Self {
        use PartitionClass::*;
        let front = [
            "ears", "nose", "head", "whiskers", "chin", "throat", "neck", "front paws", "elbows",
            "shoulder", "withers",
        ];
        let back = ["tailbase", "tailend", "back paws", "back knees", "hip"];
        Self::new(
            "generic",
            front
                .iter()
                .map(|n| (*n, Front))
                .chain(back.iter().map(|n| (*n, Back))),
            Some(PriorityAnchors {
                head: "nose".into(),
                tail: "tailbase".into(),
            }),
            Some(PawGroups {
                front: vec!["front paws".into()],
                back: vec!["back paws".into()],
            }),
        )
        .expect("generic skeleton map is valid")
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn entries(&self) -> &BTreeMap<String, PartitionClass> {
        &self.entries
    }

    pub fn priority_anchors(&self) -> Option<&PriorityAnchors> {
        self.priority_anchors.as_ref()
    }

    pub fn paws(&self) -> Option<&PawGroups> {
        self.paws.as_ref()
    }

    /// Total lookup. Unknown names resolve to `Ignore` and are logged once per name.
    pub fn classify_keypoint(&self, name: &str) -> PartitionClass {
        let key = normalize_name(name);
        if let Some(&class) = self.entries.get(&key) {
            return class;
        }
        let mut warned = self.warned.lock().unwrap_or_else(|p| p.into_inner());
        if warned.insert(key.clone()) {
            log::warn!(
                "skeleton map {:?}: unmapped keypoint {:?} treated as ignore",
                self.source_id,
                key
            );
        }
        PartitionClass::Ignore
    }

    /// Unmapped names seen so far by [`classify_keypoint`](Self::classify_keypoint).
    pub fn unmapped_names(&self) -> Vec<String> {
        let warned = self.warned.lock().unwrap_or_else(|p| p.into_inner());
        warned.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    NonQuadruped,
    Climbing,
    Aquatic,
}

impl ExclusionReason {
    pub fn parse(word: &str) -> Option<Self> {
        match word.trim().to_ascii_lowercase().as_str() {
            "non-quadruped" | "nonquadruped" | "non_quadruped" => Some(Self::NonQuadruped),
            "climbing" => Some(Self::Climbing),
            "aquatic" => Some(Self::Aquatic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesPolicy {
    excluded: BTreeMap<String, ExclusionReason>,
}

/// Hippos, otters and simians, under the identifiers used by the common
/// multi-species pose datasets.
const DEFAULT_EXCLUSIONS: &[(&str, ExclusionReason)] = &[
    ("hippopotamus", ExclusionReason::Aquatic),
    ("hippo", ExclusionReason::Aquatic),
    ("otter", ExclusionReason::Aquatic),
    ("monkey", ExclusionReason::Climbing),
    ("alouatta", ExclusionReason::Climbing),
    ("noisy night monkey", ExclusionReason::Climbing),
    ("spider monkey", ExclusionReason::Climbing),
    ("uakari", ExclusionReason::Climbing),
    ("chimpanzee", ExclusionReason::Climbing),
    ("gorilla", ExclusionReason::Climbing),
    ("orangutan", ExclusionReason::Climbing),
];

impl Default for SpeciesPolicy {
    fn default() -> Self {
        Self {
            excluded: DEFAULT_EXCLUSIONS
                .iter()
                .map(|(s, r)| (s.to_string(), *r))
                .collect(),
        }
    }
}

impl SpeciesPolicy {
    pub fn empty() -> Self {
        Self {
            excluded: BTreeMap::new(),
        }
    }

    pub fn exclude(&mut self, species: &str, reason: ExclusionReason) {
        self.excluded.insert(normalize_name(species), reason);
    }

    pub fn excluded(&self) -> &BTreeMap<String, ExclusionReason> {
        &self.excluded
    }

    pub fn exclusion_reason(&self, species: &str) -> Option<ExclusionReason> {
        self.excluded.get(&normalize_name(species)).copied()
    }

    pub fn species_admissible(&self, species: &str) -> bool {
        if species.trim().is_empty() {
            log::warn!("annotation without a species tag admitted");
            return true;
        }
        self.exclusion_reason(species).is_none()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExclusion {
    species: String,
    reason: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSourceConfig {
    source_id: String,
    entries: BTreeMap<String, String>,
    #[serde(default)]
    priority_anchors: Option<PriorityAnchors>,
    #[serde(default)]
    paws: Option<PawGroups>,
    #[serde(default = "default_true")]
    default_exclusions: bool,
    #[serde(default)]
    excluded_species: Vec<RawExclusion>,
}

fn default_true() -> bool {
    true
}

/// Skeleton map and species policy read from one source configuration document.
#[derive(Debug, Clone)]
pub struct SourceConfig {
    pub map: SkeletonMap,
    pub policy: SpeciesPolicy,
}

/// Parses a TOML source configuration document.
pub fn load_source_config(text: &str) -> Result<SourceConfig, SkeletonError> {
    let raw: RawSourceConfig = toml::from_str(text).map_err(|e| SkeletonError::Parse(e.to_string()))?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    for (name, word) in &raw.entries {
        let class = PartitionClass::parse(word).ok_or_else(|| SkeletonError::UnknownPartition {
            name: name.clone(),
            word: word.clone(),
        })?;
        entries.push((name.as_str(), class));
    }
    let map = SkeletonMap::new(&raw.source_id, entries, raw.priority_anchors, raw.paws)?;
    let mut policy = if raw.default_exclusions {
        SpeciesPolicy::default()
    } else {
        SpeciesPolicy::empty()
    };
    for ex in &raw.excluded_species {
        let reason =
            ExclusionReason::parse(&ex.reason).ok_or_else(|| SkeletonError::UnknownReason(ex.reason.clone()))?;
        policy.exclude(&ex.species, reason);
    }
    Ok(SourceConfig { map, policy })
}

pub fn load_skeleton_map(text: &str) -> Result<SkeletonMap, SkeletonError> {
    load_source_config(text).map(|c| c.map)
}

/// Source configurations shipped with the crate, by file stem.
pub const BUILTIN_SOURCES: &[(&str, &str)] = &[
    ("ap10k", include_str!("../config/skeletons/ap10k.toml")),
    ("animal_pose", include_str!("../config/skeletons/animal_pose.toml")),
    ("atrw", include_str!("../config/skeletons/atrw.toml")),
    ("stanford_extra", include_str!("../config/skeletons/stanford_extra.toml")),
    ("synthetic", include_str!("../config/skeletons/synthetic.toml")),
];

pub fn builtin_source(name: &str) -> Option<SourceConfig> {
    BUILTIN_SOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| load_source_config(text).expect("builtin source config is valid"))
}
