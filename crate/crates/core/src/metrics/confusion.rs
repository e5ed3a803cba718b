use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::classification::BinaryCounts;
use super::MetricsError;
use crate::domain::SpeciesLabel;

/// Square count matrix indexed `[actual][predicted]` over an ordered label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<SpeciesLabel>,
    cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<SpeciesLabel>) -> Result<Self, MetricsError> {
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(MetricsError::DuplicateLabel(l.clone()));
            }
        }
        let n = labels.len();
        Ok(Self {
            labels,
            cells: vec![vec![0; n]; n],
        })
    }

    pub fn labels(&self) -> &[SpeciesLabel] {
        &self.labels
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn index_of(&self, label: &SpeciesLabel) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, actual: &SpeciesLabel, predicted: &SpeciesLabel) -> Option<u64> {
        Some(self.cells[self.index_of(actual)?][self.index_of(predicted)?])
    }

    pub fn add(&mut self, actual: &SpeciesLabel, predicted: &SpeciesLabel) -> Result<(), MetricsError> {
        let a = self
            .index_of(actual)
            .ok_or_else(|| MetricsError::UnknownLabel(actual.clone()))?;
        let p = self
            .index_of(predicted)
            .ok_or_else(|| MetricsError::UnknownLabel(predicted.clone()))?;
        self.cells[a][p] += 1;
        Ok(())
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.cells[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.cells.iter().map(|row| row[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.cells[i][i]).sum()
    }

    /// Counts for `class` against all other labels.
    pub fn one_vs_rest_counts(&self, class: &SpeciesLabel) -> Result<BinaryCounts, MetricsError> {
        let c = self
            .index_of(class)
            .ok_or_else(|| MetricsError::UnknownLabel(class.clone()))?;
        let tp = self.cells[c][c];
        let false_neg = self.row_sum(c) - tp;
        let false_pos = self.col_sum(c) - tp;
        let true_neg = self.total() - tp - false_neg - false_pos;
        Ok(BinaryCounts::new(tp, false_pos, true_neg, false_neg))
    }

    /// Adds every cell of `other`, which must share the label order.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.labels != self.labels {
            return Err(MetricsError::LabelSetMismatch);
        }
        for (row, orow) in self.cells.iter_mut().zip(&other.cells) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        Ok(())
    }
}

/// Tabulates `(actual, predicted)` pairs over the declared label order.
pub fn build_confusion<'a>(
    labels: Vec<SpeciesLabel>,
    rows: impl IntoIterator<Item = (&'a SpeciesLabel, &'a SpeciesLabel)>,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut m = ConfusionMatrix::zeros(labels)?;
    let index: HashMap<SpeciesLabel, usize> = m
        .labels
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    for (actual, predicted) in rows {
        let a = *index
            .get(actual)
            .ok_or_else(|| MetricsError::UnknownLabel(actual.clone()))?;
        let p = *index
            .get(predicted)
            .ok_or_else(|| MetricsError::UnknownLabel(predicted.clone()))?;
        m.cells[a][p] += 1;
    }
    Ok(m)
}
