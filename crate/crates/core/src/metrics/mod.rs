//! COCO-style detection metrics: greedy matching, 101-point interpolated AP
//! and AR over the IoU thresholds 0.50:0.05:0.95.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use crate::bbox::iou;
use crate::bbox::{iou_or_zero, BBox};
use crate::episodic::Annotation;
use crate::error::{Error, Result};

pub use oracle::oracle_evaluate;

/// Detections kept per image and class.
pub const MAX_DETS: usize = 100;

/// The ten IoU thresholds, `(50 + 5 i) / 100`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// One entry of a detection-results file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
}

impl From<&Annotation> for GroundTruth {
    fn from(a: &Annotation) -> Self {
        GroundTruth {
            image_id: a.image_id,
            category_id: a.class_id,
            bbox: a.bbox,
        }
    }
}

/// A detection in global rank order with its match outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDet {
    /// Index into the detection slice passed to [`match_detections`].
    pub det: usize,
    pub score: f64,
    /// Index of the matched ground truth, `None` for a false positive.
    pub gt: Option<usize>,
}

/// Result of matching at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub ranked: Vec<RankedDet>,
    pub num_gt: usize,
}

impl Assignment {
    pub fn true_positives(&self) -> usize {
        self.ranked.iter().filter(|r| r.gt.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.ranked.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.num_gt - self.true_positives()
    }

    pub fn recall(&self) -> Option<f64> {
        (self.num_gt > 0).then(|| self.true_positives() as f64 / self.num_gt as f64)
    }
}

fn stable_by_score_desc<T>(items: &mut [T], score: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)));
}

/// Greedy matching within each (image, class): per image, detections are
/// visited by descending score and each takes the unmatched ground truth of
/// its class with the highest IoU at or above `iou_thresh`. At most
/// `max_dets` detections per (image, class) are considered. The returned
/// ranking concatenates images in ascending id order and then stable-sorts
/// by score.
pub fn match_detections_capped(
    dets: &[DetectionRecord],
    gts: &[GroundTruth],
    iou_thresh: f64,
    max_dets: usize,
) -> Assignment {
    let mut det_groups: BTreeMap<(u64, u32), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        det_groups.entry((d.image_id, d.category_id)).or_default().push(i);
    }
    let mut gt_groups: BTreeMap<(u64, u32), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_groups.entry((g.image_id, g.category_id)).or_default().push(i);
    }
    let mut ranked = Vec::new();
    let mut by_image: BTreeMap<u64, Vec<RankedDet>> = BTreeMap::new();
    for (key, mut idx) in det_groups {
        stable_by_score_desc(&mut idx, |&i| dets[i].score);
        idx.truncate(max_dets);
        let candidates = gt_groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let mut taken = vec![false; candidates.len()];
        let out = by_image.entry(key.0).or_default();
        for i in idx {
            let mut best: Option<(usize, f64)> = None;
            for (c, &g) in candidates.iter().enumerate() {
                if taken[c] {
                    continue;
                }
                let v = iou_or_zero(&dets[i].bbox, &gts[g].bbox);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            if let Some((c, _)) = best {
                taken[c] = true;
            }
            out.push(RankedDet {
                det: i,
                score: dets[i].score,
                gt: best.map(|(c, _)| candidates[c]),
            });
        }
    }
    for (_, mut v) in by_image {
        // restore input order inside an image before the global sort
        v.sort_by_key(|r| r.det);
        ranked.extend(v);
    }
    stable_by_score_desc(&mut ranked, |r| r.score);
    Assignment {
        ranked,
        num_gt: gts.len(),
    }
}

pub fn match_detections(dets: &[DetectionRecord], gts: &[GroundTruth], iou_thresh: f64) -> Assignment {
    match_detections_capped(dets, gts, iou_thresh, usize::MAX)
}

/// 101-point interpolated average precision of one class at one threshold.
/// `None` when the class has no ground truth.
pub fn average_precision(assignment: &Assignment) -> Option<f64> {
    if assignment.num_gt == 0 {
        return None;
    }
    let n = assignment.num_gt as f64;
    let mut recall = Vec::with_capacity(assignment.ranked.len());
    let mut precision = Vec::with_capacity(assignment.ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in &assignment.ranked {
        if r.gt.is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let at = recall.partition_point(|&x| x < r);
        if at < precision.len() {
            total += precision[at];
        }
    }
    Some(total / 101.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    #[serde(rename = "AR")]
    pub ar: f64,
    pub ground_truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    #[serde(rename = "AR")]
    pub ar: f64,
    pub per_class: BTreeMap<u32, ClassMetrics>,
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
    pub max_dets_per_image: usize,
}

impl MetricsReport {
    /// Plain-text table of the headline and per-class numbers.
    pub fn table(&self) -> String {
        let mut s = format!(
            "AP {:.4}  AP50 {:.4}  AP75 {:.4}  AR@{} {:.4}\n",
            self.ap, self.ap50, self.ap75, self.max_dets_per_image, self.ar
        );
        s += &format!(
            "images {}  ground truths {}  detections {}\n",
            self.images, self.ground_truths, self.detections
        );
        s += "class      AP    AP50    AP75      AR   #gt\n";
        for (c, m) in &self.per_class {
            s += &format!(
                "{c:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>5}\n",
                m.ap, m.ap50, m.ap75, m.ar, m.ground_truths
            );
        }
        s
    }
}

/// AP, AP50, AP75 and AR averaged over the given classes. Classes without
/// ground truth are left out of every average.
pub fn evaluate(dets: &[DetectionRecord], gts: &[GroundTruth], classes: &BTreeSet<u32>) -> Result<MetricsReport> {
    let thresholds = iou_thresholds();
    let mut per_class = BTreeMap::new();
    for &class in classes {
        let class_gts: Vec<GroundTruth> = gts.iter().filter(|g| g.category_id == class).copied().collect();
        if class_gts.is_empty() {
            continue;
        }
        let class_dets: Vec<DetectionRecord> = dets.iter().filter(|d| d.category_id == class).copied().collect();
        let mut aps = [0.0; 10];
        let mut recalls = [0.0; 10];
        for (t, &thr) in thresholds.iter().enumerate() {
            let a = match_detections_capped(&class_dets, &class_gts, thr, MAX_DETS);
            aps[t] = average_precision(&a).unwrap_or(0.0);
            recalls[t] = a.recall().unwrap_or(0.0);
        }
        per_class.insert(
            class,
            ClassMetrics {
                ap: aps.iter().sum::<f64>() / 10.0,
                ap50: aps[0],
                ap75: aps[5],
                ar: recalls.iter().sum::<f64>() / 10.0,
                ground_truths: class_gts.len(),
            },
        );
    }
    if per_class.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| per_class.values().map(f).sum::<f64>() / per_class.len() as f64;
    let images: BTreeSet<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    Ok(MetricsReport {
        ap: mean(&|m| m.ap),
        ap50: mean(&|m| m.ap50),
        ap75: mean(&|m| m.ap75),
        ar: mean(&|m| m.ar),
        images: images.len(),
        ground_truths: per_class.values().map(|m| m.ground_truths).sum(),
        detections: dets.iter().filter(|d| classes.contains(&d.category_id)).count(),
        per_class,
        max_dets_per_image: MAX_DETS,
    })
}
