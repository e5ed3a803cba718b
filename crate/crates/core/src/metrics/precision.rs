//! Average precision, mean average precision and average recall.
//!
//! AP uses 101-point interpolation: the mean over r in {0.00, 0.01, .., 1.00}
//! of the highest precision reached at any recall >= r. Size-bucketed variants
//! keep only ground truths whose area falls in the bucket; detections matched to
//! an out-of-bucket truth are dropped, unmatched detections still count as
//! false positives.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::geometry::{size_bucket, SizeBucket};
use super::matching::{match_detections, score_order};
use super::{GroundTruth, ImageEval, MetricsError};
use crate::domain::{Detection, SpeciesLabel};

pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, .., 0.95.
pub fn iou_sweep() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouThresholds {
    Single(f64),
    /// Averaged over [`iou_sweep`].
    Sweep,
}

impl IouThresholds {
    pub fn values(&self) -> Vec<f64> {
        match self {
            IouThresholds::Single(t) => vec![*t],
            IouThresholds::Sweep => iou_sweep().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub iou: IouThresholds,
    pub size: Option<SizeBucket>,
}

impl MapConfig {
    pub fn at(threshold: f64) -> Self {
        Self {
            iou: IouThresholds::Single(threshold),
            size: None,
        }
    }

    pub fn sweep() -> Self {
        Self {
            iou: IouThresholds::Sweep,
            size: None,
        }
    }

    pub fn with_size(mut self, bucket: SizeBucket) -> Self {
        self.size = Some(bucket);
        self
    }
}

fn in_bucket(truth: &GroundTruth, size: Option<SizeBucket>) -> bool {
    size.map_or(true, |b| size_bucket(&truth.bbox) == b)
}

fn split_by_class<'a>(
    image: &'a ImageEval,
    class: &SpeciesLabel,
) -> (Vec<Detection>, Vec<GroundTruth>) {
    let dets = image
        .detections
        .iter()
        .filter(|d| &d.label == class)
        .cloned()
        .collect();
    let truths = image
        .truths
        .iter()
        .filter(|t| &t.label == class)
        .cloned()
        .collect();
    (dets, truths)
}

/// TP/FP flags of all `class` detections in global score order, plus the
/// number of ground truths in scope.
fn class_outcomes(
    class: &SpeciesLabel,
    images: &[ImageEval],
    iou_threshold: f64,
    size: Option<SizeBucket>,
) -> (Vec<bool>, usize) {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut positives = 0;
    for image in images {
        let (dets, truths) = split_by_class(image, class);
        positives += truths.iter().filter(|t| in_bucket(t, size)).count();
        let matched = match_detections(&dets, &truths, iou_threshold).truth_for_detection(dets.len());
        for (det, truth) in dets.iter().zip(matched) {
            match truth {
                Some(t) if in_bucket(&truths[t], size) => scored.push((det.score, true)),
                Some(_) => {}
                None => scored.push((det.score, false)),
            }
        }
    }
    // stable: equal scores keep image order, then detection order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    (scored.into_iter().map(|(_, tp)| tp).collect(), positives)
}

/// 101-point interpolated AP of a ranked TP/FP sequence.
///
/// `None` when there is nothing to evaluate (no positives, no detections);
/// zero when detections exist without positives.
pub fn interpolated_ap(ranked_hits: &[bool], positives: usize) -> Option<f64> {
    if positives == 0 {
        return (!ranked_hits.is_empty()).then_some(0.0);
    }
    let mut cum_tp = Vec::with_capacity(ranked_hits.len());
    let mut precision = Vec::with_capacity(ranked_hits.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_hits.iter().enumerate() {
        tp += hit as usize;
        cum_tp.push(tp);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for r in 0..RECALL_POINTS {
        // first rank whose recall tp/positives reaches r/100
        while idx < cum_tp.len() && cum_tp[idx] * 100 < r * positives {
            idx += 1;
        }
        if idx == cum_tp.len() {
            break;
        }
        sum += precision[idx];
    }
    Some(sum / RECALL_POINTS as f64)
}

/// AP of one class over many images at an IoU threshold.
pub fn average_precision(class: &SpeciesLabel, images: &[ImageEval], iou_threshold: f64) -> Option<f64> {
    average_precision_in(class, images, iou_threshold, None)
}

pub fn average_precision_in(
    class: &SpeciesLabel,
    images: &[ImageEval],
    iou_threshold: f64,
    size: Option<SizeBucket>,
) -> Option<f64> {
    let (hits, positives) = class_outcomes(class, images, iou_threshold, size);
    interpolated_ap(&hits, positives)
}

/// Mean of the defined per-class APs.
pub fn mean_average_precision(per_class: &BTreeMap<SpeciesLabel, Option<f64>>) -> Result<f64, MetricsError> {
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedValues);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Every label occurring as a truth or detection, sorted.
pub fn classes_in(images: &[ImageEval]) -> BTreeSet<SpeciesLabel> {
    images
        .iter()
        .flat_map(|i| {
            i.truths
                .iter()
                .map(|t| t.label.clone())
                .chain(i.detections.iter().map(|d| d.label.clone()))
        })
        .collect()
}

/// Per-class AP for a configuration; averaged over thresholds for sweeps.
pub fn per_class_ap(images: &[ImageEval], config: MapConfig) -> BTreeMap<SpeciesLabel, Option<f64>> {
    let thresholds = config.iou.values();
    classes_in(images)
        .into_iter()
        .map(|class| {
            let aps: Vec<f64> = thresholds
                .iter()
                .filter_map(|&t| average_precision_in(&class, images, t, config.size))
                .collect();
            let ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            (class, ap)
        })
        .collect()
}

pub fn map_at(images: &[ImageEval], config: MapConfig) -> Result<f64, MetricsError> {
    for t in config.iou.values() {
        if !(t > 0.0 && t <= 1.0) {
            return Err(MetricsError::BadThreshold(t));
        }
    }
    mean_average_precision(&per_class_ap(images, config))
}

/// Highest-scoring `k` detections of an image.
pub fn top_k(detections: &[Detection], k: usize) -> Vec<Detection> {
    score_order(detections)
        .into_iter()
        .take(k)
        .map(|i| detections[i].clone())
        .collect()
}

/// Recall averaged over the IoU sweep and over classes with ground truth,
/// keeping at most `k` detections per image.
pub fn average_recall_at_k(images: &[ImageEval], k: usize, size: Option<SizeBucket>) -> Option<f64> {
    let capped: Vec<ImageEval> = images
        .iter()
        .map(|i| ImageEval {
            image_id: i.image_id.clone(),
            truths: i.truths.clone(),
            detections: top_k(&i.detections, k),
        })
        .collect();
    let mut per_class = Vec::new();
    for class in classes_in(&capped) {
        let split: Vec<_> = capped.iter().map(|i| split_by_class(i, &class)).collect();
        let positives: usize = split
            .iter()
            .map(|(_, truths)| truths.iter().filter(|t| in_bucket(t, size)).count())
            .sum();
        if positives == 0 {
            continue;
        }
        let recalls: Vec<f64> = iou_sweep()
            .iter()
            .map(|&t| {
                let found: usize = split
                    .iter()
                    .map(|(dets, truths)| {
                        match_detections(dets, truths, t)
                            .pairs
                            .iter()
                            .filter(|p| in_bucket(&truths[p.truth], size))
                            .count()
                    })
                    .sum();
                found as f64 / positives as f64
            })
            .collect();
        per_class.push(recalls.iter().sum::<f64>() / recalls.len() as f64);
    }
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Detection-quality summary in the usual precision/recall table layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub map: Option<f64>,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    pub map_small: Option<f64>,
    pub map_medium: Option<f64>,
    pub map_large: Option<f64>,
    pub ar_1: Option<f64>,
    pub ar_10: Option<f64>,
    pub ar_100: Option<f64>,
    pub ar_100_small: Option<f64>,
    pub ar_100_medium: Option<f64>,
    pub ar_100_large: Option<f64>,
}

impl DetectionSummary {
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("Precision/mAP", self.map),
            ("Precision/mAP@.50IOU", self.map_50),
            ("Precision/mAP@.75IOU", self.map_75),
            ("Precision/mAP (small)", self.map_small),
            ("Precision/mAP (medium)", self.map_medium),
            ("Precision/mAP (large)", self.map_large),
            ("Recall/AR@1", self.ar_1),
            ("Recall/AR@10", self.ar_10),
            ("Recall/AR@100", self.ar_100),
            ("Recall/AR@100 (small)", self.ar_100_small),
            ("Recall/AR@100 (medium)", self.ar_100_medium),
            ("Recall/AR@100 (large)", self.ar_100_large),
        ]
    }
}

pub fn summarize_detections(images: &[ImageEval]) -> DetectionSummary {
    let map = |c: MapConfig| map_at(images, c).ok();
    DetectionSummary {
        map: map(MapConfig::sweep()),
        map_50: map(MapConfig::at(0.5)),
        map_75: map(MapConfig::at(0.75)),
        map_small: map(MapConfig::sweep().with_size(SizeBucket::Small)),
        map_medium: map(MapConfig::sweep().with_size(SizeBucket::Medium)),
        map_large: map(MapConfig::sweep().with_size(SizeBucket::Large)),
        ar_1: average_recall_at_k(images, 1, None),
        ar_10: average_recall_at_k(images, 10, None),
        ar_100: average_recall_at_k(images, 100, None),
        ar_100_small: average_recall_at_k(images, 100, Some(SizeBucket::Small)),
        ar_100_medium: average_recall_at_k(images, 100, Some(SizeBucket::Medium)),
        ar_100_large: average_recall_at_k(images, 100, Some(SizeBucket::Large)),
    }
}
