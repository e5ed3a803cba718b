use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{HarnessError, TrialRecord};
use crate::domain::SpeciesLabel;
use crate::metrics::{classification_metrics, BinaryCounts, ConfusionMatrix, MetricSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSpec {
    pub classes: Vec<SpeciesLabel>,
    pub per_class: usize,
    pub folds: usize,
    pub seed: u64,
}

impl FoldSpec {
    pub fn new(
        classes: Vec<SpeciesLabel>,
        per_class: usize,
        folds: usize,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if per_class == 0 {
            return Err(HarnessError::BadSpec("per_class must be at least 1".into()));
        }
        if folds == 0 {
            return Err(HarnessError::BadSpec("folds must be at least 1".into()));
        }
        if classes.is_empty() {
            return Err(HarnessError::BadSpec("class list is empty".into()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c) {
                return Err(HarnessError::BadSpec(format!("class {c} listed twice")));
            }
        }
        Ok(Self {
            classes,
            per_class,
            folds,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fold {
    pub index: usize,
    pub samples: Vec<TrialRecord>,
}

impl Fold {
    /// The recorded prediction of every image in the fold.
    pub fn predictions(&self) -> HashMap<String, SpeciesLabel> {
        self.samples
            .iter()
            .map(|s| (s.image_id.clone(), s.predicted_label.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExcludedClass {
    pub label: SpeciesLabel,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub classes: Vec<SpeciesLabel>,
    pub excluded: Vec<ExcludedClass>,
    pub folds: Vec<Fold>,
}

/// Draws `spec.folds` independent folds of `per_class` images for every class
/// with enough support. Within a fold images are drawn without replacement;
/// across folds an image may recur.
pub fn sample_folds(pool: &[TrialRecord], spec: &FoldSpec) -> Result<FoldPlan, HarnessError> {
    let mut by_class: HashMap<&SpeciesLabel, Vec<usize>> = HashMap::new();
    for (i, r) in pool.iter().enumerate() {
        by_class.entry(&r.true_label).or_default().push(i);
    }
    let mut classes = Vec::new();
    let mut excluded = Vec::new();
    for class in &spec.classes {
        let support = by_class.get(class).map_or(0, Vec::len);
        if support >= spec.per_class {
            classes.push(class.clone());
        } else {
            tracing::warn!(class = %class, support, per_class = spec.per_class, "class excluded from trial");
            excluded.push(ExcludedClass {
                label: class.clone(),
                support,
            });
        }
    }
    if classes.is_empty() {
        return Err(HarnessError::NoEligibleClasses {
            per_class: spec.per_class,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let folds = (0..spec.folds)
        .map(|index| {
            let mut samples = Vec::with_capacity(classes.len() * spec.per_class);
            for class in &classes {
                let members = &by_class[class];
                let mut picked = sample(&mut rng, members.len(), spec.per_class).into_vec();
                picked.sort_unstable();
                samples.extend(picked.into_iter().map(|k| pool[members[k]].clone()));
            }
            Fold { index, samples }
        })
        .collect();
    Ok(FoldPlan {
        classes,
        excluded,
        folds,
    })
}

/// Groups records by their `fold` field (absent means fold 0), keeping record order.
pub fn folds_from_records(records: &[TrialRecord]) -> Vec<Fold> {
    let mut grouped: BTreeMap<usize, Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.fold.unwrap_or(0)).or_default().push(r.clone());
    }
    grouped
        .into_iter()
        .map(|(index, samples)| Fold { index, samples })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassResult {
    pub label: SpeciesLabel,
    /// Images whose true label is this class.
    pub support: u64,
    pub counts: BinaryCounts,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub index: usize,
    pub per_class: Vec<ClassResult>,
    /// Macro-average over classes, skipping undefined values.
    pub overall: MetricSet,
    pub confusion: ConfusionMatrix,
}

impl FoldReport {
    pub fn class(&self, label: &SpeciesLabel) -> Option<&ClassResult> {
        self.per_class.iter().find(|c| &c.label == label)
    }
}

/// `classes` followed by any other label seen, in first-seen order.
fn label_universe<'a>(
    classes: &[SpeciesLabel],
    seen: impl IntoIterator<Item = &'a SpeciesLabel>,
) -> Vec<SpeciesLabel> {
    let mut labels = classes.to_vec();
    for l in seen {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    labels
}

/// Scores one fold against `predictions`. Per-class counts are accumulated
/// directly from the (actual, predicted) pairs; the confusion matrix is built
/// alongside for the pooled view.
pub fn evaluate_fold(
    fold: &Fold,
    predictions: &HashMap<String, SpeciesLabel>,
    classes: &[SpeciesLabel],
) -> Result<FoldReport, HarnessError> {
    let mut pairs = Vec::with_capacity(fold.samples.len());
    for s in &fold.samples {
        let predicted = predictions
            .get(&s.image_id)
            .ok_or_else(|| HarnessError::MissingPrediction(s.image_id.clone()))?;
        pairs.push((&s.true_label, predicted));
    }

    let labels = label_universe(classes, pairs.iter().flat_map(|(a, p)| [*a, *p]));
    let mut confusion = ConfusionMatrix::zeros(labels)?;
    for (a, p) in &pairs {
        confusion.add(a, p)?;
    }

    let per_class: Vec<ClassResult> = classes
        .iter()
        .map(|class| {
            let mut counts = BinaryCounts::default();
            let mut support = 0;
            for (a, p) in &pairs {
                match (*a == class, *p == class) {
                    (true, true) => counts.true_pos += 1,
                    (true, false) => counts.false_neg += 1,
                    (false, true) => counts.false_pos += 1,
                    (false, false) => counts.true_neg += 1,
                }
                support += (*a == class) as u64;
            }
            ClassResult {
                label: class.clone(),
                support,
                counts,
                metrics: classification_metrics(&counts),
            }
        })
        .collect();
    let overall = MetricSet::mean(per_class.iter().map(|c| &c.metrics));
    Ok(FoldReport {
        index: fold.index,
        per_class,
        overall,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAverage {
    pub label: SpeciesLabel,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub classes: Vec<SpeciesLabel>,
    pub excluded: Vec<ExcludedClass>,
    pub folds: Vec<FoldReport>,
    /// Per-class mean of the fold values.
    pub averages: Vec<ClassAverage>,
    pub overall_average: MetricSet,
    pub pooled_confusion: ConfusionMatrix,
    /// Metrics of the summed counts, for comparison with the fold means.
    pub pooled: Vec<ClassResult>,
    /// Cochran sample size for the trial population, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_sample: Option<u64>,
}

impl TrialReport {
    pub fn average(&self, label: &SpeciesLabel) -> Option<&MetricSet> {
        self.averages.iter().find(|a| &a.label == label).map(|a| &a.metrics)
    }

    pub fn pooled_class(&self, label: &SpeciesLabel) -> Option<&ClassResult> {
        self.pooled.iter().find(|c| &c.label == label)
    }
}

pub fn aggregate_trial(
    classes: &[SpeciesLabel],
    folds: Vec<FoldReport>,
    excluded: Vec<ExcludedClass>,
) -> Result<TrialReport, HarnessError> {
    if folds.is_empty() {
        return Err(HarnessError::NoFolds);
    }
    let averages = classes
        .iter()
        .map(|label| ClassAverage {
            label: label.clone(),
            metrics: MetricSet::mean(folds.iter().filter_map(|f| f.class(label)).map(|c| &c.metrics)),
        })
        .collect();
    let overall_average = MetricSet::mean(folds.iter().map(|f| &f.overall));

    let labels = label_universe(classes, folds.iter().flat_map(|f| f.confusion.labels()));
    let mut pooled_confusion = ConfusionMatrix::zeros(labels)?;
    for f in &folds {
        let fl = f.confusion.labels();
        for (i, a) in fl.iter().enumerate() {
            for (j, p) in fl.iter().enumerate() {
                for _ in 0..f.confusion.cells()[i][j] {
                    pooled_confusion.add(a, p)?;
                }
            }
        }
    }
    let pooled = classes
        .iter()
        .map(|label| {
            let counts = pooled_confusion.one_vs_rest_counts(label)?;
            Ok(ClassResult {
                label: label.clone(),
                support: counts.true_pos + counts.false_neg,
                counts,
                metrics: classification_metrics(&counts),
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(TrialReport {
        classes: classes.to_vec(),
        excluded,
        folds,
        averages,
        overall_average,
        pooled_confusion,
        pooled,
        recommended_sample: None,
    })
}
