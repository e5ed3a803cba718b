use serde::Serialize;

use super::geometry::iou;
use super::GroundTruth;
use crate::domain::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub detection: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl MatchResult {
    /// Truth index matched by each detection, indexed by detection.
    pub fn truth_for_detection(&self, n_detections: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_detections];
        for p in &self.pairs {
            out[p.detection] = Some(p.truth);
        }
        out
    }
}

/// Detection indices by descending score; equal scores keep input order.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy one-to-one matching by descending detection score.
///
/// Each detection takes the unmatched truth of the same class with the highest
/// IoU at or above `iou_threshold`; ties go to the lower truth index.
pub fn match_detections(
    dets: &[Detection],
    truths: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut truth_taken = vec![false; truths.len()];
    let mut det_matched = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for d in score_order(dets) {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if truth_taken[t] || truth.label != det.label {
                continue;
            }
            let overlap = iou(&det.bbox, &truth.bbox);
            if overlap < iou_threshold {
                continue;
            }
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((t, overlap));
            }
        }
        if let Some((t, overlap)) = best {
            truth_taken[t] = true;
            det_matched[d] = true;
            pairs.push(MatchedPair {
                detection: d,
                truth: t,
                iou: overlap,
            });
        }
    }
    MatchResult {
        pairs,
        unmatched_detections: (0..dets.len()).filter(|&d| !det_matched[d]).collect(),
        unmatched_truths: (0..truths.len()).filter(|&t| !truth_taken[t]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpeciesLabel;
    use proptest::prelude::*;

    fn pica() -> SpeciesLabel {
        SpeciesLabel::species("Pica pica").unwrap()
    }

    fn det(label: SpeciesLabel, score: f64, b: [f64; 4]) -> Detection {
        Detection::new(label, score, b.into()).unwrap()
    }

    fn truth(label: SpeciesLabel, b: [f64; 4]) -> GroundTruth {
        GroundTruth {
            label,
            bbox: b.into(),
        }
    }

    #[test]
    fn exact_match() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let m = match_detections(&[det(pica(), 0.9, b)], &[truth(pica(), b)], 0.5);
        assert_eq!(m.pairs, vec![MatchedPair { detection: 0, truth: 0, iou: 1.0 }]);
        assert!(m.unmatched_detections.is_empty() && m.unmatched_truths.is_empty());
    }

    #[test]
    fn class_gate() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let other = SpeciesLabel::species("Chloris chloris").unwrap();
        let m = match_detections(&[det(pica(), 0.9, b)], &[truth(other, b)], 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_detections, vec![0]);
        assert_eq!(m.unmatched_truths, vec![0]);
    }

    #[test]
    fn higher_score_wins_the_truth() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let dets = [det(pica(), 0.8, b), det(pica(), 0.9, [0.0, 0.0, 10.0, 9.0])];
        let truths = [truth(pica(), b)];
        let m = match_detections(&dets, &truths, 0.5);
        // Enumerate the assignments: {none}, {d0->t0}, {d1->t0}; greedy picks the top score.
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].detection, 1);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn tie_goes_to_lower_truth_index() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let m = match_detections(&[det(pica(), 0.9, b)], &[truth(pica(), b), truth(pica(), b)], 0.5);
        assert_eq!(m.pairs[0].truth, 0);
    }

    #[test]
    fn prefers_highest_iou_truth() {
        let m = match_detections(
            &[det(pica(), 0.9, [0.0, 0.0, 10.0, 10.0])],
            &[truth(pica(), [0.0, 0.0, 10.0, 14.0]), truth(pica(), [0.0, 0.0, 10.0, 11.0])],
            0.5,
        );
        assert_eq!(m.pairs[0].truth, 1);
    }

    fn scene() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
        let labels = vec![pica(), SpeciesLabel::species("Chloris chloris").unwrap()];
        let bx = (0u8..20, 0u8..20, 2u8..12, 2u8..12)
            .prop_map(|(x, y, w, h)| [x as f64, y as f64, (x + w) as f64, (y + h) as f64]);
        let l2 = labels.clone();
        (
            proptest::collection::vec((0usize..2, 0.0f64..1.0, bx.clone()), 0..6).prop_map(move |v| {
                v.into_iter().map(|(l, s, b)| det(labels[l].clone(), s, b)).collect()
            }),
            proptest::collection::vec((0usize..2, bx), 0..6)
                .prop_map(move |v| v.into_iter().map(|(l, b)| truth(l2[l].clone(), b)).collect()),
        )
    }

    proptest! {
        #[test]
        fn matching_invariants((dets, truths) in scene(), lo in 0.05f64..0.95, delta in 0.0f64..0.5) {
            let hi = (lo + delta).min(1.0);
            let m = match_detections(&dets, &truths, lo);
            prop_assert!(m.pairs.len() <= dets.len().min(truths.len()));
            let mut seen_d = std::collections::HashSet::new();
            let mut seen_t = std::collections::HashSet::new();
            for p in &m.pairs {
                prop_assert!(seen_d.insert(p.detection));
                prop_assert!(seen_t.insert(p.truth));
                prop_assert!(p.iou >= lo);
            }
            prop_assert_eq!(m.pairs.len() + m.unmatched_detections.len(), dets.len());
            prop_assert_eq!(m.pairs.len() + m.unmatched_truths.len(), truths.len());
            let stricter = match_detections(&dets, &truths, hi);
            prop_assert!(stricter.pairs.len() <= m.pairs.len());
        }
    }
}
