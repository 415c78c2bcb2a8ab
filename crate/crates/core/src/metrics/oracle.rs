//! Literal re-computation of the metrics, kept free of any code shared with
//! the main evaluator so the two can check each other.

use std::collections::{BTreeMap, BTreeSet};

use super::{ClassMetrics, DetectionRecord, GroundTruth, MetricsReport};
use crate::error::{Error, Result};

const THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
const CAP: usize = 100;

fn overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    let left = if a[0] > b[0] { a[0] } else { b[0] };
    let top = if a[1] > b[1] { a[1] } else { b[1] };
    let right = if a[0] + a[2] < b[0] + b[2] { a[0] + a[2] } else { b[0] + b[2] };
    let bottom = if a[1] + a[3] < b[1] + b[3] { a[1] + a[3] } else { b[1] + b[3] };
    let inter = if right > left && bottom > top { (right - left) * (bottom - top) } else { 0.0 };
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Insertion sort on `(score desc)`, which keeps equal scores in input order.
fn rank<T: Copy>(items: &[T], score: impl Fn(&T) -> f64) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for &item in items {
        let mut at = out.len();
        while at > 0 && score(&out[at - 1]) < score(&item) {
            at -= 1;
        }
        out.insert(at, item);
    }
    out
}

/// Returns `(ranked true-positive flags, matched count)` for one class.
fn outcomes(dets: &[DetectionRecord], gts: &[GroundTruth], images: &BTreeSet<u64>, thr: f64) -> (Vec<bool>, usize) {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut matched = 0;
    for &img in images {
        let mine: Vec<DetectionRecord> = dets.iter().filter(|d| d.image_id == img).copied().collect();
        let truths: Vec<GroundTruth> = gts.iter().filter(|g| g.image_id == img).copied().collect();
        let mut used = vec![false; truths.len()];
        let ordered = rank(&mine, |d| d.score);
        for d in ordered.iter().take(CAP) {
            let mut pick = None;
            let mut pick_iou = -1.0;
            for (j, g) in truths.iter().enumerate() {
                let o = overlap(d.bbox.to_array(), g.bbox.to_array());
                if !used[j] && o >= thr && o > pick_iou {
                    pick = Some(j);
                    pick_iou = o;
                }
            }
            if let Some(j) = pick {
                used[j] = true;
                matched += 1;
            }
            pooled.push((d.score, pick.is_some()));
        }
    }
    let ranked = rank(&pooled, |p| p.0);
    (ranked.into_iter().map(|p| p.1).collect(), matched)
}

fn interpolated_ap(flags: &[bool], total: usize) -> f64 {
    let mut points = Vec::new();
    let mut hits = 0usize;
    for (k, &tp) in flags.iter().enumerate() {
        if tp {
            hits += 1;
        }
        points.push((hits as f64 / total as f64, hits as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let mut best = 0.0;
        for &(rec, prec) in &points {
            if rec >= r && prec > best {
                best = prec;
            }
        }
        sum += best;
    }
    sum / 101.0
}

/// Same contract as [`super::evaluate`], computed by exhaustive enumeration.
pub fn oracle_evaluate(dets: &[DetectionRecord], gts: &[GroundTruth], classes: &BTreeSet<u32>) -> Result<MetricsReport> {
    let mut images = BTreeSet::new();
    for g in gts {
        images.insert(g.image_id);
    }
    for d in dets {
        images.insert(d.image_id);
    }
    let mut per_class = BTreeMap::new();
    for &c in classes {
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.category_id == c).copied().collect();
        if cg.is_empty() {
            continue;
        }
        let cd: Vec<DetectionRecord> = dets.iter().filter(|d| d.category_id == c).copied().collect();
        let mut ap_sum = 0.0;
        let mut ar_sum = 0.0;
        let mut ap_at = [0.0; 10];
        for (t, &thr) in THRESHOLDS.iter().enumerate() {
            let (flags, matched) = outcomes(&cd, &cg, &images, thr);
            ap_at[t] = interpolated_ap(&flags, cg.len());
            ap_sum += ap_at[t];
            ar_sum += matched as f64 / cg.len() as f64;
        }
        per_class.insert(
            c,
            ClassMetrics {
                ap: ap_sum / 10.0,
                ap50: ap_at[0],
                ap75: ap_at[5],
                ar: ar_sum / 10.0,
                ground_truths: cg.len(),
            },
        );
    }
    if per_class.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let n = per_class.len() as f64;
    let mut report = MetricsReport {
        ap: 0.0,
        ap50: 0.0,
        ap75: 0.0,
        ar: 0.0,
        per_class: BTreeMap::new(),
        images: images.len(),
        ground_truths: 0,
        detections: dets.iter().filter(|d| classes.contains(&d.category_id)).count(),
        max_dets_per_image: CAP,
    };
    for m in per_class.values() {
        report.ap += m.ap / n;
        report.ap50 += m.ap50 / n;
        report.ap75 += m.ap75 / n;
        report.ar += m.ar / n;
        report.ground_truths += m.ground_truths;
    }
    report.per_class = per_class;
    Ok(report)
}
