//! Detector output and best-detection selection.

use alloc::vec::Vec;

/// Axis-aligned box in pixel coordinates, `(x_min, y_min)` inclusive corner
/// and `(x_max, y_max)` exclusive corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub const fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    /// Finite coordinates with positive width and height.
    pub fn is_well_formed(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    /// Clamps the box into `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Option<BBox> {
        let (w, h) = (width as f32, height as f32);
        let b = BBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        };
        b.is_well_formed().then_some(b)
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// Confidence in `[0, 1]`.
    pub score: f32,
    /// Index into the prompt list the detector was queried with.
    pub label_index: usize,
}

impl Detection {
    /// Brings a raw detector output in line with the detection contract:
    /// box clamped to the image and score clamped to `[0, 1]`. Returns `None`
    /// for boxes that fall entirely outside the image or a NaN score.
    pub fn sanitized(self, width: u32, height: u32) -> Option<Detection> {
        if self.score.is_nan() {
            return None;
        }
        Some(Detection {
            bbox: self.bbox.clamped(width, height)?,
            score: self.score.clamp(0.0, 1.0),
            label_index: self.label_index,
        })
    }
}

/// Highest-scoring detection strictly above `threshold`.
///
/// Ties keep the earliest detection in detector order.
pub fn best_detection(detections: &[Detection], threshold: f32) -> Option<Detection> {
    let mut best: Option<Detection> = None;
    for d in detections {
        if d.score > threshold && best.is_none_or(|b| d.score > b.score) {
            best = Some(*d);
        }
    }
    best
}

/// Sanitizes a whole detector output; see [`Detection::sanitized`].
pub fn sanitize_all(raw: Vec<Detection>, width: u32, height: u32) -> Vec<Detection> {
    raw.into_iter().filter_map(|d| d.sanitized(width, height)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn det(score: f32, label_index: usize) -> Detection {
        Detection { bbox: BBox::new(0.0, 0.0, 1.0, 1.0), score, label_index }
    }

    #[test]
    fn empty_input_selects_nothing() {
        assert_eq!(best_detection(&[], 0.0), None);
    }

    #[test]
    fn picks_maximum_above_threshold() {
        let best = best_detection(&[det(0.3, 0), det(0.7, 1)], 0.5).unwrap();
        assert_eq!(best.label_index, 1);
        assert_eq!(best_detection(&[det(0.3, 0)], 0.5), None);
    }

    #[test]
    fn threshold_comparison_is_strict() {
        assert_eq!(best_detection(&[det(0.5, 0)], 0.5), None);
    }

    #[test]
    fn ties_keep_first_occurrence() {
        let best = best_detection(&[det(0.6, 0), det(0.9, 1), det(0.9, 2)], 0.1).unwrap();
        assert_eq!(best.label_index, 1);
    }

    #[test]
    fn sanitizing_clamps_boxes_and_scores() {
        let raw = vec![
            Detection { bbox: BBox::new(-5.0, 2.0, 50.0, 8.0), score: 1.2, label_index: 0 },
            Detection { bbox: BBox::new(40.0, 40.0, 60.0, 60.0), score: 0.5, label_index: 0 },
        ];
        let out = sanitize_all(raw, 20, 10);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, BBox::new(0.0, 2.0, 20.0, 8.0));
        assert_eq!(out[0].score, 1.0);
    }

    proptest! {
        #[test]
        fn best_is_above_threshold_and_dominates(
            scores in proptest::collection::vec(0.0f32..=1.0, 0..20),
            threshold in 0.0f32..=1.0,
        ) {
            let dets: Vec<_> = scores.iter().enumerate().map(|(i, &s)| det(s, i)).collect();
            match best_detection(&dets, threshold) {
                Some(best) => {
                    prop_assert!(best.score > threshold);
                    prop_assert!(dets.iter().all(|d| d.score <= best.score));
                }
                None => prop_assert!(dets.iter().all(|d| d.score <= threshold)),
            }
        }
    }
}
