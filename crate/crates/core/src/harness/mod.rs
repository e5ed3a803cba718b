//! Field-trial evaluation: sample sizing, stratified folds, per-fold
//! one-vs-rest metrics, fold averaging and the pooled confusion matrix.

mod folds;
mod report;
mod sample_size;

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Detection, SpeciesLabel};
use crate::metrics::MetricsError;

pub use folds::{
    aggregate_trial, evaluate_fold, folds_from_records, sample_folds, ClassAverage, ClassResult,
    ExcludedClass, Fold, FoldPlan, FoldReport, FoldSpec, TrialReport,
};
pub use report::{emit_report, ReportFormat};
pub use sample_size::{infinite_population_sample_size, required_sample_size, Confidence};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("margin of error {0} must lie in (0, 1)")]
    BadMargin(f64),
    #[error("population must be at least 1")]
    EmptyPopulation,
    #[error("confidence level {0} is not one of 0.90, 0.95, 0.99")]
    UnsupportedConfidence(f64),
    #[error("invalid fold specification: {0}")]
    BadSpec(String),
    #[error("no class has enough images for {per_class} per fold")]
    NoEligibleClasses { per_class: usize },
    #[error("image {0} has no prediction")]
    MissingPrediction(String),
    #[error("a trial needs at least one fold")]
    NoFolds,
    #[error("unknown report format {0:?} (expected text, markdown or json)")]
    UnknownFormat(String),
    #[error("trial fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One verified image of the trial: operator label, model label, fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub image_id: String,
    pub true_label: SpeciesLabel,
    pub predicted_label: SpeciesLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

/// Reads JSON-lines trial records. Blank lines are skipped; image ids must be unique.
pub fn read_trial_records(reader: impl BufRead) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(&line).map_err(|e| HarnessError::Fixture {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(s) = record.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(HarnessError::Fixture {
                    line: i + 1,
                    message: format!("score {s} outside [0, 1]"),
                });
            }
        }
        if !seen.insert(record.image_id.clone()) {
            return Err(HarnessError::Fixture {
                line: i + 1,
                message: format!("duplicate image id {}", record.image_id),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_trial_records(mut writer: impl Write, records: &[TrialRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Image-level label: the highest-scoring detection's label, Blank when none.
/// Ties keep the earlier detection.
pub fn image_level_label(detections: &[Detection]) -> SpeciesLabel {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if best.map_or(true, |b| d.score > b.score) {
            best = Some(d);
        }
    }
    best.map_or_else(SpeciesLabel::blank, |d| d.label.clone())
}
