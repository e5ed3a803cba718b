use serde::{Deserialize, Serialize};

use crate::domain::BoundingBox;

/// Upper area bound (exclusive) of the small bucket, in square pixels.
pub const SMALL_AREA_MAX: f64 = 32.0 * 32.0;
/// Upper area bound (exclusive) of the medium bucket, in square pixels.
pub const MEDIUM_AREA_MAX: f64 = 96.0 * 96.0;

/// Intersection over union of two boxes. Zero for disjoint or degenerate input.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];
}

/// Bucket of a ground-truth box by its area.
pub fn size_bucket(truth: &BoundingBox) -> SizeBucket {
    let area = truth.width() * truth.height();
    if area < SMALL_AREA_MAX {
        SizeBucket::Small
    } else if area < MEDIUM_AREA_MAX {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts covered unit cells for integer-cornered boxes.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let inside = |bx: &BoundingBox, x: f64, y: f64| x > bx.xmin && x < bx.xmax && y > bx.ymin && y < bx.ymax;
        let (mut inter, mut union) = (0u32, 0u32);
        for x in 0..40 {
            for y in 0..40 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
                inter += (ia && ib) as u32;
                union += (ia || ib) as u32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(5.0, 5.0, 15.0, 15.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BoundingBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(raster_iou(&a, &b), 25.0 / 175.0);
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-12);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(10.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn size_bucket_examples() {
        assert_eq!(size_bucket(&BoundingBox::new(0.0, 0.0, 10.0, 10.0)), SizeBucket::Small);
        assert_eq!(size_bucket(&BoundingBox::new(0.0, 0.0, 50.0, 50.0)), SizeBucket::Medium);
        assert_eq!(size_bucket(&BoundingBox::new(0.0, 0.0, 100.0, 100.0)), SizeBucket::Large);
        // boundaries
        assert_eq!(size_bucket(&BoundingBox::new(0.0, 0.0, 32.0, 32.0)), SizeBucket::Medium);
        assert_eq!(size_bucket(&BoundingBox::new(0.0, 0.0, 96.0, 96.0)), SizeBucket::Large);
    }

    fn int_box() -> impl Strategy<Value = BoundingBox> {
        (0u8..30, 0u8..30, 1u8..10, 1u8..10).prop_map(|(x, y, w, h)| {
            BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
        })
    }

    proptest! {
        #[test]
        fn iou_matches_raster_count(a in int_box(), b in int_box()) {
            prop_assert!((iou(&a, &b) - raster_iou(&a, &b)).abs() < 1e-12);
        }
    }
}
