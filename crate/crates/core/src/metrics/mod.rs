//! Detection and classification evaluation: IoU, greedy matching, AP/mAP,
//! AR@k, one-vs-rest counts and confusion matrices.

mod classification;
mod confusion;
mod geometry;
mod matching;
mod precision;

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoundingBox, Detection, SpeciesLabel};

pub use classification::{
    classification_metrics, format_percent, percent_half_up, BinaryCounts, MetricSet, METRIC_NAMES,
};
pub use confusion::{build_confusion, ConfusionMatrix};
pub use geometry::{iou, size_bucket, SizeBucket, MEDIUM_AREA_MAX, SMALL_AREA_MAX};
pub use matching::{match_detections, MatchResult, MatchedPair};
pub use precision::{
    average_precision, average_precision_in, average_recall_at_k, classes_in, interpolated_ap,
    iou_sweep, map_at, mean_average_precision, per_class_ap, summarize_detections, top_k,
    DetectionSummary, IouThresholds, MapConfig, RECALL_POINTS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label {0} is not in the declared label set")]
    UnknownLabel(SpeciesLabel),
    #[error("label {0} appears twice in the label set")]
    DuplicateLabel(SpeciesLabel),
    #[error("confusion matrices use different label sets")]
    LabelSetMismatch,
    #[error("no class has a defined value")]
    NoDefinedValues,
    #[error("IoU threshold {0} must lie in (0, 1]")]
    BadThreshold(f64),
}

/// A ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: SpeciesLabel,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Truths and detections of one image; one line of the interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    #[serde(default)]
    pub truths: Vec<GroundTruth>,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: detection score {score} outside [0, 1]")]
    BadScore { line: usize, score: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a line-delimited JSON interchange file; blank lines are skipped.
pub fn read_image_evals(reader: impl BufRead) -> Result<Vec<ImageEval>, InterchangeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageEval = serde_json::from_str(&line)
            .map_err(|source| InterchangeError::Parse { line: i + 1, source })?;
        if let Some(d) = record.detections.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
            return Err(InterchangeError::BadScore {
                line: i + 1,
                score: d.score,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_image_evals(mut writer: impl Write, images: &[ImageEval]) -> io::Result<()> {
    for image in images {
        serde_json::to_writer(&mut writer, image)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
