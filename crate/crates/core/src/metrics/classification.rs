use serde::{Deserialize, Serialize};

/// One-vs-rest outcome counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl BinaryCounts {
    pub fn new(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        Self {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

impl std::ops::Add for BinaryCounts {
    type Output = BinaryCounts;

    fn add(self, o: BinaryCounts) -> BinaryCounts {
        BinaryCounts::new(
            self.true_pos + o.true_pos,
            self.false_pos + o.false_pos,
            self.true_neg + o.true_neg,
            self.false_neg + o.false_neg,
        )
    }
}

/// Classification metrics; `None` marks an undefined (0/0) value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Names of the metrics in report order.
pub const METRIC_NAMES: [&str; 5] = ["Accuracy", "Precision", "Sensitivity", "Specificity", "F1-Score"];

impl MetricSet {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.accuracy,
            self.precision,
            self.sensitivity,
            self.specificity,
            self.f1,
        ]
    }

    pub fn from_values(v: [Option<f64>; 5]) -> Self {
        Self {
            accuracy: v[0],
            precision: v[1],
            sensitivity: v[2],
            specificity: v[3],
            f1: v[4],
        }
    }

    /// Per-metric arithmetic mean, skipping undefined entries.
    pub fn mean<'a>(sets: impl IntoIterator<Item = &'a MetricSet>) -> MetricSet {
        let mut sum = [0.0f64; 5];
        let mut n = [0usize; 5];
        for set in sets {
            for (i, v) in set.values().into_iter().enumerate() {
                if let Some(v) = v {
                    sum[i] += v;
                    n[i] += 1;
                }
            }
        }
        let mut out = [None; 5];
        for i in 0..5 {
            if n[i] > 0 {
                out[i] = Some(sum[i] / n[i] as f64);
            }
        }
        MetricSet::from_values(out)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &BinaryCounts) -> MetricSet {
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let sensitivity = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricSet {
        precision,
        sensitivity,
        specificity: ratio(c.true_neg, c.true_neg + c.false_pos),
        f1,
        accuracy: ratio(c.true_pos + c.true_neg, c.total()),
    }
}

/// Rounds a fraction to a percentage with two decimals, half-up.
pub fn percent_half_up(fraction: f64) -> f64 {
    let scaled = fraction * 10_000.0;
    // absorb binary representation error before the half-up step
    (scaled + 0.5 + 1e-7).floor() / 100.0
}

/// "87.90%" or "n/a".
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", percent_half_up(v)),
        None => "n/a".to_string(),
    }
}
