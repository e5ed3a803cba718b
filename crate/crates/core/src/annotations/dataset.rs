use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{AnnotatedImage, BoundingBox, BoxViolation, SpeciesLabel};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemovalReason {
    QualityFlag(String),
    NoValidObjects,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedObject {
    pub image_id: String,
    pub object_index: usize,
    pub bbox: BoundingBox,
    pub violations: Vec<BoxViolation>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<AnnotatedImage>,
    pub removed: Vec<(AnnotatedImage, RemovalReason)>,
    pub dropped_objects: Vec<DroppedObject>,
}

/// Removes flagged images and images without a single valid object.
///
/// Kept images lose their invalid objects; each loss is recorded in
/// `dropped_objects`. Input order is preserved on both sides.
pub fn filter_unusable(images: Vec<AnnotatedImage>) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for mut image in images {
        if let Some(flag) = image.quality_flag.clone() {
            out.removed.push((image, RemovalReason::QualityFlag(flag)));
            continue;
        }
        let (w, h) = (image.width as f64, image.height as f64);
        let mut dropped = Vec::new();
        let mut valid = Vec::with_capacity(image.objects.len());
        for (object_index, object) in image.objects.iter().enumerate() {
            let violations = object.bbox.validate(w, h);
            if violations.is_empty() {
                valid.push(object.clone());
            } else {
                dropped.push(DroppedObject {
                    image_id: image.image_id.clone(),
                    object_index,
                    bbox: object.bbox,
                    violations,
                });
            }
        }
        if valid.is_empty() {
            out.removed.push((image, RemovalReason::NoValidObjects));
            continue;
        }
        for d in &dropped {
            tracing::warn!(
                image_id = %d.image_id,
                object_index = d.object_index,
                violations = ?d.violations,
                "dropping invalid object"
            );
        }
        out.dropped_objects.extend(dropped);
        image.objects = valid;
        out.kept.push(image);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub image_count: usize,
    pub tag_count: usize,
    pub mean_resolution: (f64, f64),
    #[serde(serialize_with = "serialize_histogram")]
    pub resolution_histogram: BTreeMap<(u32, u32), usize>,
    pub class_counts: BTreeMap<SpeciesLabel, usize>,
}

fn serialize_histogram<S: serde::Serializer>(
    histogram: &BTreeMap<(u32, u32), usize>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = serializer.serialize_map(Some(histogram.len()))?;
    for ((w, h), count) in histogram {
        map.serialize_entry(&format!("{w}x{h}"), count)?;
    }
    map.end()
}

/// Resolution and class statistics. Widths and heights are averaged
/// independently; class counts count tagged objects, not images.
pub fn dataset_summary(images: &[AnnotatedImage]) -> Result<DatasetSummary, DatasetError> {
    if images.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = images.len() as f64;
    let mut sum_w = 0.0;
    let mut sum_h = 0.0;
    let mut resolution_histogram = BTreeMap::new();
    let mut class_counts: BTreeMap<SpeciesLabel, usize> = BTreeMap::new();
    for image in images {
        sum_w += image.width as f64;
        sum_h += image.height as f64;
        *resolution_histogram
            .entry((image.width, image.height))
            .or_insert(0) += 1;
        for object in &image.objects {
            *class_counts.entry(object.label.clone()).or_insert(0) += 1;
        }
    }
    Ok(DatasetSummary {
        image_count: images.len(),
        tag_count: class_counts.values().sum(),
        mean_resolution: (sum_w / n, sum_h / n),
        resolution_histogram,
        class_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Number of training items for `n` items: `round(ratio * n)`.
pub fn train_size(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

/// Seeded random partition of `ids` into train and validation sets.
///
/// The selection depends on the input order and seed; both output lists keep
/// the input order.
pub fn split_ids<S: AsRef<str>>(
    ids: &[S],
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    if ids.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n_train = train_size(ids.len(), ratio);
    if n_train == ids.len() {
        tracing::warn!(n = ids.len(), ratio, "validation split is empty");
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; ids.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (id, selected) in ids.iter().zip(in_train) {
        let id = id.as_ref().to_string();
        if selected {
            train.push(id);
        } else {
            validation.push(id);
        }
    }
    Ok(SplitAssignment {
        train,
        validation,
        ratio,
        seed,
    })
}

pub fn split_dataset(
    images: &[AnnotatedImage],
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let ids: Vec<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
    split_ids(&ids, ratio, seed)
}

/// Tag totals (train, validation) for a split of `images`.
pub fn split_tag_counts(split: &SplitAssignment, images: &[AnnotatedImage]) -> (usize, usize) {
    let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
    images.iter().fold((0, 0), |(t, v), image| {
        if train.contains(image.image_id.as_str()) {
            (t + image.objects.len(), v)
        } else {
            (t, v + image.objects.len())
        }
    })
}
