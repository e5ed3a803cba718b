//! Shared vocabulary: boxes, species labels, detections and annotated images.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the reserved label assigned to images without any kept detection.
pub const BLANK_LABEL: &str = "Blank";

/// Quality marker used by the tagging tool for images unfit for training.
pub const NO_GOOD_MARKER: &str = "no good";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("degenerate box {0}: width and height must be positive")]
    DegenerateBox(BoundingBox),
    #[error("invalid box {bbox}: {violations:?}")]
    InvalidBox {
        bbox: BoundingBox,
        violations: Vec<BoxViolation>,
    },
    #[error("label is empty after trimming")]
    EmptyLabel,
    #[error("{0:?} is a quality marker, not a species label")]
    QualityMarker(String),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("detections cannot carry the reserved blank label")]
    BlankDetection,
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("camera resolution must be positive, got {width}x{height}")]
    EmptyResolution { width: u32, height: u32 },
}

/// Axis-aligned rectangle in continuous pixel coordinates, origin top-left.
///
/// Corners follow the (xmin, ymin, xmax, ymax) convention of VOC annotations.
/// Construction does not validate; use [`BoundingBox::validate`] or
/// [`BoundingBox::try_new`] where the invariants matter.
/// Serialized as `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxViolation {
    NonFinite,
    NegativeCoordinate,
    /// xmin >= xmax
    InvertedX,
    /// ymin >= ymax
    InvertedY,
    ExceedsWidth,
    ExceedsHeight,
}

impl fmt::Display for BoxViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            BoxViolation::NonFinite => "coordinate is not finite",
            BoxViolation::NegativeCoordinate => "coordinate is negative",
            BoxViolation::InvertedX => "xmin >= xmax",
            BoxViolation::InvertedY => "ymin >= ymax",
            BoxViolation::ExceedsWidth => "box exceeds image width",
            BoxViolation::ExceedsHeight => "box exceeds image height",
        };
        f.write_str(text)
    }
}

impl BoundingBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    /// Builds a box and checks the frame-independent invariants.
    pub fn try_new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, DomainError> {
        let bbox = Self::new(xmin, ymin, xmax, ymax);
        let violations = bbox.shape_violations();
        if violations.is_empty() {
            Ok(bbox)
        } else {
            Err(DomainError::InvalidBox { bbox, violations })
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Area in square pixels. Zero-width, zero-height or inverted boxes are rejected.
    pub fn area(&self) -> Result<f64, DomainError> {
        let (w, h) = (self.width(), self.height());
        if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
            return Err(DomainError::DegenerateBox(*self));
        }
        Ok(w * h)
    }

    /// Every invariant violation of this box inside a `width` x `height` frame.
    /// An empty list means the box is valid.
    pub fn validate(&self, width: f64, height: f64) -> Vec<BoxViolation> {
        let mut violations = self.shape_violations();
        if violations.contains(&BoxViolation::NonFinite) {
            return violations;
        }
        if self.xmax > width || self.xmin > width {
            violations.push(BoxViolation::ExceedsWidth);
        }
        if self.ymax > height || self.ymin > height {
            violations.push(BoxViolation::ExceedsHeight);
        }
        violations
    }

    pub fn is_valid_in(&self, width: f64, height: f64) -> bool {
        self.validate(width, height).is_empty()
    }

    fn shape_violations(&self) -> Vec<BoxViolation> {
        let coords = [self.xmin, self.ymin, self.xmax, self.ymax];
        if coords.iter().any(|c| !c.is_finite()) {
            return vec![BoxViolation::NonFinite];
        }
        let mut violations = Vec::new();
        if coords.iter().any(|&c| c < 0.0) {
            violations.push(BoxViolation::NegativeCoordinate);
        }
        if self.xmin >= self.xmax {
            violations.push(BoxViolation::InvertedX);
        }
        if self.ymin >= self.ymax {
            violations.push(BoxViolation::InvertedY);
        }
        violations
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.xmin, self.ymin, self.xmax, self.ymax
        )
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

/// A species name (binomial) or the reserved blank class.
///
/// Serialized as its canonical name; deserialization runs [`normalize_label`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeciesLabel {
    canonical_name: String,
    is_blank: bool,
}

impl SpeciesLabel {
    /// Normalizes `raw` into a species label. Quality markers are rejected here;
    /// use [`normalize_label`] to tell the two apart.
    pub fn species(raw: &str) -> Result<Self, DomainError> {
        match normalize_label(raw)? {
            LabelToken::Label(label) => Ok(label),
            LabelToken::QualityFlag(flag) => Err(DomainError::QualityMarker(flag)),
        }
    }

    pub fn blank() -> Self {
        Self {
            canonical_name: BLANK_LABEL.to_string(),
            is_blank: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.canonical_name
    }

    pub fn is_blank(&self) -> bool {
        self.is_blank
    }
}

impl fmt::Display for SpeciesLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name)
    }
}

impl Serialize for SpeciesLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical_name)
    }
}

impl<'de> Deserialize<'de> for SpeciesLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        match normalize_label(&raw).map_err(serde::de::Error::custom)? {
            LabelToken::Label(label) => Ok(label),
            LabelToken::QualityFlag(flag) => Err(serde::de::Error::custom(format!(
                "{flag:?} is a quality marker, not a label"
            ))),
        }
    }
}

/// Result of normalizing a raw annotation or backend label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelToken {
    Label(SpeciesLabel),
    /// The raw text was a quality marker such as "no good"; it flags the image
    /// and never becomes a class.
    QualityFlag(String),
}

/// Trims, collapses internal whitespace and classifies a raw label.
///
/// "Blank" (any case) maps to the reserved blank label and "no good" (any case)
/// to a quality flag.
pub fn normalize_label(raw: &str) -> Result<LabelToken, DomainError> {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(DomainError::EmptyLabel);
    }
    if collapsed.eq_ignore_ascii_case(NO_GOOD_MARKER) {
        return Ok(LabelToken::QualityFlag(NO_GOOD_MARKER.to_string()));
    }
    if collapsed.eq_ignore_ascii_case(BLANK_LABEL) {
        return Ok(LabelToken::Label(SpeciesLabel::blank()));
    }
    Ok(LabelToken::Label(SpeciesLabel {
        canonical_name: collapsed,
        is_blank: false,
    }))
}

/// One backend detection: a non-blank species, a score in [0, 1] and a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: SpeciesLabel,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn new(label: SpeciesLabel, score: f64, bbox: BoundingBox) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DomainError::ScoreOutOfRange(score));
        }
        if label.is_blank() {
            return Err(DomainError::BlankDetection);
        }
        Ok(Self { label, score, bbox })
    }
}

/// A tagged object inside an annotated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub label: SpeciesLabel,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
    pub quality_flag: Option<String>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Result<Self, DomainError> {
        if width == 0 || height == 0 {
            return Err(DomainError::EmptyImage { width, height });
        }
        Ok(Self {
            image_id: image_id.into(),
            width,
            height,
            objects: Vec::new(),
            quality_flag: None,
        })
    }

    pub fn with_object(mut self, label: SpeciesLabel, bbox: BoundingBox) -> Self {
        self.objects.push(AnnotatedObject { label, bbox });
        self
    }

    pub fn object_is_valid(&self, object: &AnnotatedObject) -> bool {
        object.bbox.is_valid_in(self.width as f64, self.height as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensitivity {
    Low,
    Medium,
    High,
}

impl fmt::Display for Sensitivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensitivity::Low => "low",
            Sensitivity::Medium => "medium",
            Sensitivity::High => "high",
        })
    }
}

impl std::str::FromStr for Sensitivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Sensitivity::Low),
            "medium" => Ok(Sensitivity::Medium),
            "high" => Ok(Sensitivity::High),
            other => Err(format!("unknown sensitivity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraSource {
    pub camera_id: String,
    pub resolution: (u32, u32),
    pub dpi: u32,
    pub sensitivity: Sensitivity,
}

impl CameraSource {
    pub fn new(
        camera_id: impl Into<String>,
        resolution: (u32, u32),
        dpi: u32,
        sensitivity: Sensitivity,
    ) -> Result<Self, DomainError> {
        let (width, height) = resolution;
        if width == 0 || height == 0 {
            return Err(DomainError::EmptyResolution { width, height });
        }
        Ok(Self {
            camera_id: camera_id.into(),
            resolution,
            dpi,
            sensitivity,
        })
    }
}
