//! Training hyperparameter profile for an external detector trainer.
//!
//! Profiles are written as `key = value` lines; augmentations appear as
//! `aug.<kind>.enabled = true` followed by `aug.<kind>.<param> = value`.
//! Optimizer moments and epsilon are left to the trainer's defaults.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub kind: String,
    pub params: BTreeMap<String, f64>,
}

impl Augmentation {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, param: &str, value: f64) -> Self {
        self.params.insert(param.to_string(), value);
        self
    }
}

pub const SQUARE_CROP: &str = "random_square_crop_by_scale";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProfile {
    pub base_model: String,
    pub resize_min: u32,
    pub resize_max: u32,
    pub feature_stride: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    pub steps: u64,
    pub augmentations: Vec<Augmentation>,
}

impl TrainProfile {
    pub fn augmentation(&self, kind: &str) -> Option<&Augmentation> {
        self.augmentations.iter().find(|a| a.kind == kind)
    }

    /// (scale_min, scale_max) of the square-crop augmentation.
    pub fn crop_scale(&self) -> Option<(f64, f64)> {
        let a = self.augmentation(SQUARE_CROP)?;
        Some((*a.params.get("scale_min")?, *a.params.get("scale_max")?))
    }
}

/// The profile the reference bird detector was trained with.
pub fn reference_profile() -> TrainProfile {
    TrainProfile {
        base_model: "faster-rcnn-resnet101-coco".into(),
        resize_min: 1024,
        resize_max: 1024,
        feature_stride: 16,
        batch_size: 32,
        learning_rate: 0.0004,
        epochs: 58,
        steps: 30_000,
        augmentations: vec![
            Augmentation::new("random_adjust_hue"),
            Augmentation::new("random_adjust_contrast"),
            Augmentation::new("random_adjust_saturation"),
            Augmentation::new(SQUARE_CROP).with("scale_min", 0.6).with("scale_max", 1.3),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileViolation {
    NonPositiveResize,
    ResizeOrder { min: u32, max: u32 },
    ZeroStride,
    StrideDoesNotDivide { stride: u32, resize_min: u32 },
    ZeroBatch,
    LearningRate(f64),
    CropScale { min: f64, max: f64 },
    MissingCropScale,
    EmptyBaseModel,
    BadName(String),
    NonFiniteParam { kind: String, param: String },
    DuplicateAugmentation(String),
}

impl fmt::Display for ProfileViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ProfileViolation::*;
        match self {
            NonPositiveResize => write!(f, "resize values must be positive"),
            ResizeOrder { min, max } => write!(f, "resize_min {min} exceeds resize_max {max}"),
            ZeroStride => write!(f, "feature_stride must be positive"),
            StrideDoesNotDivide { stride, resize_min } => {
                write!(f, "feature_stride {stride} does not divide resize_min {resize_min}")
            }
            ZeroBatch => write!(f, "batch_size must be at least 1"),
            LearningRate(lr) => write!(f, "learning_rate {lr} must be positive and finite"),
            CropScale { min, max } => write!(f, "crop scale needs 0 < scale_min <= scale_max, got ({min}, {max})"),
            MissingCropScale => write!(f, "{SQUARE_CROP} needs scale_min and scale_max"),
            EmptyBaseModel => write!(f, "base_model is empty"),
            BadName(n) => write!(f, "{n:?} is not a valid name (use a-z, 0-9, '_' and '-')"),
            NonFiniteParam { kind, param } => write!(f, "aug.{kind}.{param} is not finite"),
            DuplicateAugmentation(k) => write!(f, "augmentation {k} listed twice"),
        }
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

pub fn validate_profile(p: &TrainProfile) -> Vec<ProfileViolation> {
    use ProfileViolation::*;
    let mut v = Vec::new();
    if p.base_model.trim().is_empty() {
        v.push(EmptyBaseModel);
    } else if p.base_model.contains(['\n', '\r']) || p.base_model.trim() != p.base_model {
        v.push(BadName(p.base_model.clone()));
    }
    if p.resize_min == 0 || p.resize_max == 0 {
        v.push(NonPositiveResize);
    }
    if p.resize_min > p.resize_max {
        v.push(ResizeOrder {
            min: p.resize_min,
            max: p.resize_max,
        });
    }
    if p.feature_stride == 0 {
        v.push(ZeroStride);
    } else if p.resize_min % p.feature_stride != 0 {
        v.push(StrideDoesNotDivide {
            stride: p.feature_stride,
            resize_min: p.resize_min,
        });
    }
    if p.batch_size == 0 {
        v.push(ZeroBatch);
    }
    if !(p.learning_rate.is_finite() && p.learning_rate > 0.0) {
        v.push(LearningRate(p.learning_rate));
    }
    let mut kinds = Vec::new();
    for a in &p.augmentations {
        if !valid_name(&a.kind) {
            v.push(BadName(a.kind.clone()));
        }
        if kinds.contains(&&a.kind) {
            v.push(DuplicateAugmentation(a.kind.clone()));
        }
        kinds.push(&a.kind);
        for (param, value) in &a.params {
            if !valid_name(param) || param == "enabled" {
                v.push(BadName(param.clone()));
            }
            if !value.is_finite() {
                v.push(NonFiniteParam {
                    kind: a.kind.clone(),
                    param: param.clone(),
                });
            }
        }
        if a.kind == SQUARE_CROP {
            match (a.params.get("scale_min"), a.params.get("scale_max")) {
                (Some(&min), Some(&max)) => {
                    if !(min > 0.0 && min <= max) {
                        v.push(CropScale { min, max });
                    }
                }
                _ => v.push(MissingCropScale),
            }
        }
    }
    v
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile is invalid: {}", join(.0))]
    Invalid(Vec<ProfileViolation>),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key} set twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot read value {value:?} for {key}")]
    BadValue { line: usize, key: String, value: String },
    #[error("missing key {0}")]
    MissingKey(&'static str),
}

fn join(v: &[ProfileViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Renders a valid profile; equal profiles render byte-identically.
pub fn render_profile(p: &TrainProfile) -> Result<String, ProfileError> {
    let violations = validate_profile(p);
    if !violations.is_empty() {
        return Err(ProfileError::Invalid(violations));
    }
    let mut out = String::new();
    let mut line = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k} = {v}\n"));
    line("base_model", &p.base_model);
    line("resize_min", &p.resize_min);
    line("resize_max", &p.resize_max);
    line("feature_stride", &p.feature_stride);
    line("batch_size", &p.batch_size);
    line("learning_rate", &p.learning_rate);
    line("epochs", &p.epochs);
    line("steps", &p.steps);
    for a in &p.augmentations {
        line(&format!("aug.{}.enabled", a.kind), &true);
        for (param, value) in &a.params {
            line(&format!("aug.{}.{param}", a.kind), value);
        }
    }
    Ok(out)
}

const SCALAR_KEYS: [&str; 8] = [
    "base_model",
    "resize_min",
    "resize_max",
    "feature_stride",
    "batch_size",
    "learning_rate",
    "epochs",
    "steps",
];

/// Parses the `key = value` grammar. `#` starts a comment line. The result is
/// validated.
pub fn parse_profile(text: &str) -> Result<TrainProfile, ProfileError> {
    let mut scalars: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut augmentations: Vec<Augmentation> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(ProfileError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || ProfileError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        let dup = || ProfileError::DuplicateKey {
            line,
            key: key.to_string(),
        };

        if let Some(rest) = key.strip_prefix("aug.") {
            let (kind, param) = rest.split_once('.').ok_or(ProfileError::Syntax { line })?;
            let pos = match augmentations.iter().position(|a| a.kind == kind) {
                Some(pos) => pos,
                None => {
                    augmentations.push(Augmentation::new(kind));
                    augmentations.len() - 1
                }
            };
            if param == "enabled" {
                match value {
                    "true" => {}
                    "false" => {
                        augmentations.remove(pos);
                    }
                    _ => return Err(bad()),
                }
            } else {
                let v: f64 = value.parse().map_err(|_| bad())?;
                if augmentations[pos].params.insert(param.to_string(), v).is_some() {
                    return Err(dup());
                }
            }
            continue;
        }

        let Some(&known) = SCALAR_KEYS.iter().find(|k| **k == key) else {
            return Err(ProfileError::UnknownKey {
                line,
                key: key.to_string(),
            });
        };
        if scalars.insert(known, (line, value)).is_some() {
            return Err(dup());
        }
    }

    fn get<'a>(m: &BTreeMap<&str, (usize, &'a str)>, key: &'static str) -> Result<(usize, &'a str), ProfileError> {
        m.get(key).copied().ok_or(ProfileError::MissingKey(key))
    }
    fn num<T: std::str::FromStr>(m: &BTreeMap<&str, (usize, &str)>, key: &'static str) -> Result<T, ProfileError> {
        let (line, value) = get(m, key)?;
        value.parse().map_err(|_| ProfileError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    let profile = TrainProfile {
        base_model: get(&scalars, "base_model")?.1.to_string(),
        resize_min: num(&scalars, "resize_min")?,
        resize_max: num(&scalars, "resize_max")?,
        feature_stride: num(&scalars, "feature_stride")?,
        batch_size: num(&scalars, "batch_size")?,
        learning_rate: num(&scalars, "learning_rate")?,
        epochs: num(&scalars, "epochs")?,
        steps: num(&scalars, "steps")?,
        augmentations,
    };
    let violations = validate_profile(&profile);
    if !violations.is_empty() {
        return Err(ProfileError::Invalid(violations));
    }
    Ok(profile)
}
