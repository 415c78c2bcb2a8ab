use std::cmp::Ordering;

use crate::bbox::iou_or_zero;

use super::Detection;

/// Ranking order: score descending, then x ascending, then y ascending.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy non-maximum suppression: visit detections in rank order and drop
/// any whose IoU with an already kept detection of the same class exceeds
/// `iou_thresh`. Output is in rank order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut ordered = dets.to_vec();
    ordered.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(ordered.len());
    for d in ordered {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou_or_zero(&k.bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use proptest::prelude::*;

    fn det(b: [f64; 4], score: f64, class_id: u32) -> Detection {
        Detection {
            bbox: b.into(),
            score,
            class_id,
        }
    }

    #[test]
    fn identical_boxes_keep_the_best() {
        let out = nms(&[det([0.0, 0.0, 10.0, 10.0], 0.8, 1), det([0.0, 0.0, 10.0, 10.0], 0.9, 1)], 0.5);
        assert_eq!(out, vec![det([0.0, 0.0, 10.0, 10.0], 0.9, 1)]);
    }

    #[test]
    fn disjoint_boxes_survive() {
        let d = [det([0.0, 0.0, 5.0, 5.0], 0.3, 1), det([10.0, 0.0, 5.0, 5.0], 0.9, 1), det([0.0, 10.0, 5.0, 5.0], 0.5, 1)];
        assert_eq!(nms(&d, 0.5).len(), 3);
    }

    #[test]
    fn other_classes_do_not_suppress() {
        let d = [det([0.0, 0.0, 5.0, 5.0], 0.3, 1), det([0.0, 0.0, 5.0, 5.0], 0.9, 2)];
        assert_eq!(nms(&d, 0.5).len(), 2);
    }

    #[test]
    fn chain_keeps_both_ends() {
        // A overlaps B, B overlaps C, A and C disjoint
        let a = det([0.0, 0.0, 10.5, 10.0], 0.9, 1);
        let b = det([0.0, 0.0, 19.0, 10.0], 0.8, 1);
        let c = det([10.5, 0.0, 8.5, 10.0], 0.7, 1);
        assert!(iou_or_zero(&a.bbox, &b.bbox) > 0.5);
        assert!(iou_or_zero(&b.bbox, &c.bbox) > 0.4);
        assert_eq!(iou_or_zero(&a.bbox, &c.bbox), 0.0);
        assert_eq!(nms(&[c, b, a], 0.5), vec![a, c]);
        // C is only tested against kept boxes, so B cannot remove it
        assert_eq!(nms(&[c, b, a], 0.4), vec![a, c]);
    }

    #[test]
    fn ties_break_on_position() {
        let l = det([1.0, 1.0, 4.0, 4.0], 0.5, 1);
        let r = det([2.0, 0.0, 4.0, 4.0], 0.5, 1);
        assert_eq!(nms(&[r, l], 0.1), vec![l]);
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64, -1.0..1.0f64, 1u32..3)
            .prop_map(|(x, y, w, h, s, c)| Detection {
                bbox: BBox::new(x, y, w, h),
                score: s,
                class_id: c,
            })
    }

    proptest! {
        #[test]
        fn subset_separated_and_idempotent(dets in prop::collection::vec(arb_det(), 0..30), t in 0.0..1.0f64) {
            let once = nms(&dets, t);
            for d in &once {
                prop_assert!(dets.contains(d));
            }
            for i in 0..once.len() {
                for j in i + 1..once.len() {
                    if once[i].class_id == once[j].class_id {
                        prop_assert!(iou_or_zero(&once[i].bbox, &once[j].bbox) <= t);
                    }
                }
            }
            prop_assert_eq!(nms(&once, t), once);
        }
    }
}
