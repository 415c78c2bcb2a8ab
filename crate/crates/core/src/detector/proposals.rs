use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{iou_or_zero, BBox};
use crate::embedding::{ExtractorParams, FeatureCache, FeatureVec};
use crate::episodic::Annotation;
use crate::error::{Error, Result};
use crate::imaging::{crop_support, ImageRGB};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Foreground,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    /// Jittered copies per ground-truth box in training.
    pub jitter_copies: usize,
    /// Maximum relative perturbation of center and size.
    pub jitter_frac: f64,
    /// Uniformly placed boxes per training query.
    pub random_boxes: usize,
    /// Side range of random boxes, pixels.
    pub random_size: [f64; 2],
    /// Inference-grid windows sampled per training query, so training sees
    /// the off-center and near-object windows that inference scores.
    pub grid_samples: usize,
    pub fg_iou: f64,
    pub bg_iou: f64,
    /// Square window sides of the inference grid.
    pub scales: Vec<u32>,
    /// Grid stride as a fraction of the window side.
    pub stride_frac: f64,
    /// Context pixels added around each proposal before feature extraction.
    pub context_px: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            jitter_copies: 3,
            jitter_frac: 0.1,
            random_boxes: 16,
            random_size: [10.0, 32.0],
            grid_samples: 16,
            fg_iou: 0.5,
            bg_iou: 0.3,
            scales: vec![16, 24, 32],
            stride_frac: 0.5,
            context_px: 4,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(format!("proposals: {m}")));
        if !(0.0..1.0).contains(&self.jitter_frac) {
            return bad(format!("jitter_frac must be in [0, 1), got {}", self.jitter_frac));
        }
        if !(self.random_size[0] >= 1.0 && self.random_size[0] <= self.random_size[1]) {
            return bad(format!("random_size must satisfy 1 <= lo <= hi, got {:?}", self.random_size));
        }
        if !(0.0 <= self.bg_iou && self.bg_iou <= self.fg_iou && self.fg_iou <= 1.0) {
            return bad("thresholds must satisfy 0 <= bg_iou <= fg_iou <= 1".into());
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad("scales must be non-empty and positive".into());
        }
        if !(self.stride_frac > 0.0 && self.stride_frac <= 1.0) {
            return bad(format!("stride_frac must be in (0, 1], got {}", self.stride_frac));
        }
        Ok(())
    }

    fn stride(&self, window: u32) -> u32 {
        ((f64::from(window) * self.stride_frac).round() as u32).max(1)
    }
}

/// A candidate box with its feature.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub bbox: BBox,
    pub feature: FeatureVec,
    /// Set in training mode only.
    pub label: Option<Label>,
    /// Annotation id of the best-overlapping positive box, for foreground.
    pub matched_gt: Option<u64>,
    pub(crate) cache: FeatureCache,
}

/// Boxes of the inference grid, row-major per scale.
pub fn grid_boxes(width: u32, height: u32, cfg: &ProposalConfig) -> Vec<BBox> {
    let mut out = Vec::new();
    for &s in &cfg.scales {
        if s > width || s > height {
            continue;
        }
        let stride = cfg.stride(s);
        for y in (0..=height - s).step_by(stride as usize) {
            for x in (0..=width - s).step_by(stride as usize) {
                out.push(BBox::new(f64::from(x), f64::from(y), f64::from(s), f64::from(s)));
            }
        }
    }
    out
}

/// Training boxes with labels: each positive box, `jitter_copies` perturbed
/// copies of it, `random_boxes` uniform boxes and `grid_samples` distinct
/// grid windows. Boxes with best IoU in
/// `[bg_iou, fg_iou)` are dropped.
pub fn training_boxes<R: Rng + ?Sized>(
    width: u32,
    height: u32,
    positives: &[Annotation],
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Vec<(BBox, Label, Option<u64>)> {
    let (w, h) = (f64::from(width), f64::from(height));
    let mut boxes = Vec::new();
    for gt in positives {
        boxes.push(gt.bbox);
        for _ in 0..cfg.jitter_copies {
            let mut u = || {
                if cfg.jitter_frac > 0.0 {
                    rng.random_range(-cfg.jitter_frac..=cfg.jitter_frac)
                } else {
                    0.0
                }
            };
            let (cx, cy) = gt.bbox.center();
            let (du, dv, sw, sh) = (u(), u(), u(), u());
            let bw = gt.bbox.w * (1.0 + sw);
            let bh = gt.bbox.h * (1.0 + sh);
            let b = BBox::new(cx + du * gt.bbox.w - bw / 2.0, cy + dv * gt.bbox.h - bh / 2.0, bw, bh);
            boxes.push(b.clip(width, height));
        }
    }
    for _ in 0..cfg.random_boxes {
        let bw = rng.random_range(cfg.random_size[0]..=cfg.random_size[1]).min(w);
        let bh = rng.random_range(cfg.random_size[0]..=cfg.random_size[1]).min(h);
        let x = rng.random_range(0.0..=w - bw);
        let y = rng.random_range(0.0..=h - bh);
        boxes.push(BBox::new(x, y, bw, bh));
    }
    if cfg.grid_samples > 0 {
        let grid = grid_boxes(width, height, cfg);
        let n = cfg.grid_samples.min(grid.len());
        boxes.extend(rand::seq::index::sample(rng, grid.len(), n).into_iter().map(|i| grid[i]));
    }
    boxes
        .into_iter()
        .filter(|b| b.w > 0.0 && b.h > 0.0)
        .filter_map(|b| {
            let best = positives
                .iter()
                .map(|g| (iou_or_zero(&b, &g.bbox), g.id))
                .max_by(|a, c| a.0.total_cmp(&c.0));
            match best {
                Some((v, id)) if v >= cfg.fg_iou => Some((b, Label::Foreground, Some(id))),
                Some((v, _)) if v >= cfg.bg_iou => None,
                _ => Some((b, Label::Background, None)),
            }
        })
        .collect()
}

fn is_flat(img: &ImageRGB) -> bool {
    let data = img.data();
    data.chunks_exact(3).all(|p| p == &data[..3])
}

/// `None` for windows without pixel variation: they carry no content, and
/// with a nonzero bias all of them would share one feature.
fn featurize(img: &ImageRGB, bbox: &BBox, context_px: u32, params: &ExtractorParams) -> Result<Option<(FeatureVec, FeatureCache)>> {
    let crop = crop_support(img, bbox, context_px, params.patch_size)?;
    if is_flat(&crop) {
        return Ok(None);
    }
    match params.forward(&crop) {
        Ok(f) => Ok(Some(f)),
        Err(Error::ZeroNorm) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Proposals with features. `positives` are the positive-class boxes and
/// only matter in training mode.
pub fn generate_proposals<R: Rng + ?Sized>(
    img: &ImageRGB,
    positives: &[Annotation],
    mode: ProposalMode,
    cfg: &ProposalConfig,
    params: &ExtractorParams,
    rng: &mut R,
) -> Result<Vec<Proposal>> {
    let labeled: Vec<(BBox, Option<Label>, Option<u64>)> = match mode {
        ProposalMode::Train => training_boxes(img.width(), img.height(), positives, cfg, rng)
            .into_iter()
            .map(|(b, l, m)| (b, Some(l), m))
            .collect(),
        ProposalMode::Infer => grid_boxes(img.width(), img.height(), cfg).into_iter().map(|b| (b, None, None)).collect(),
    };
    let mut out = Vec::with_capacity(labeled.len());
    for (bbox, label, matched_gt) in labeled {
        if let Some((feature, cache)) = featurize(img, &bbox, cfg.context_px, params)? {
            out.push(Proposal {
                bbox,
                feature,
                label,
                matched_gt,
                cache,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ann(id: u64, b: [f64; 4]) -> Annotation {
        Annotation {
            id,
            image_id: 1,
            class_id: 1,
            bbox: b.into(),
        }
    }

    #[test]
    fn grid_count() {
        let cfg = ProposalConfig {
            scales: vec![16],
            ..ProposalConfig::default()
        };
        assert_eq!(grid_boxes(64, 64, &cfg).len(), 49);
        let all = grid_boxes(64, 64, &ProposalConfig::default());
        assert_eq!(all.len(), 49 + 16 + 9);
        assert!(all.iter().all(|b| b.within(64, 64)));
    }

    #[test]
    fn zero_jitter_copy_is_the_gt() {
        let cfg = ProposalConfig {
            jitter_copies: 1,
            jitter_frac: 0.0,
            random_boxes: 0,
            grid_samples: 0,
            ..ProposalConfig::default()
        };
        let gt = ann(7, [10.0, 12.0, 14.0, 9.0]);
        let boxes = training_boxes(64, 64, &[gt], &cfg, &mut rng::stream(0, 0, 0));
        assert_eq!(boxes.len(), 2);
        for (b, l, m) in boxes {
            assert_eq!(iou_or_zero(&b, &gt.bbox), 1.0);
            assert_eq!(l, Label::Foreground);
            assert_eq!(m, Some(7));
        }
    }

    #[test]
    fn no_positive_means_no_foreground() {
        let boxes = training_boxes(64, 64, &[], &ProposalConfig::default(), &mut rng::stream(0, 0, 1));
        assert_eq!(boxes.len(), 32);
        assert!(boxes.iter().all(|(_, l, _)| *l == Label::Background));
        let grid = grid_boxes(64, 64, &ProposalConfig::default());
        let sampled: Vec<BBox> = boxes[16..].iter().map(|(b, _, _)| *b).collect();
        assert!(sampled.iter().all(|b| grid.contains(b)));
        for (i, b) in sampled.iter().enumerate() {
            assert!(!sampled[i + 1..].contains(b), "grid windows are drawn without replacement");
        }
    }

    #[test]
    fn labels_are_consistent_with_iou() {
        let cfg = ProposalConfig {
            random_boxes: 64,
            ..ProposalConfig::default()
        };
        let gts = [ann(1, [5.0, 5.0, 20.0, 20.0]), ann(2, [30.0, 34.0, 16.0, 22.0])];
        let mut r = rng::stream(0, 0, 2);
        for _ in 0..50 {
            for (b, l, _) in training_boxes(64, 64, &gts, &cfg, &mut r) {
                let best = gts.iter().map(|g| iou_or_zero(&b, &g.bbox)).fold(0.0, f64::max);
                match l {
                    Label::Foreground => assert!(best >= 0.5),
                    Label::Background => assert!(best < 0.3),
                }
                assert!(b.within(64, 64));
            }
        }
    }

    #[test]
    fn proposals_carry_unit_features() {
        let mut r = rng::stream(0, 0, 3);
        let params = ExtractorParams::random(8, 8, &mut r);
        let mut img = ImageRGB::filled(64, 64, [40, 40, 40]);
        for y in 10..30 {
            for x in 12..28 {
                img.set_pixel(x, y, [200, 50, 90]);
            }
        }
        let props = generate_proposals(&img, &[], ProposalMode::Infer, &ProposalConfig::default(), &params, &mut r).unwrap();
        // windows entirely on the flat background are skipped
        assert!(!props.is_empty() && props.len() < 74);
        for p in &props {
            assert!((p.feature.norm() - 1.0).abs() < 1e-9);
            assert!(p.label.is_none());
        }
    }
}
