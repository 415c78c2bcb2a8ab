use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::embedding::{class_embedding, cosine_sim, ExtractorParams, FeatureVec};
use crate::episodic::{DatasetIndex, FewShotSets};
use crate::error::{Error, Result};
use crate::imaging::{crop_support, ImageRGB};
use crate::metrics::DetectionRecord;
use crate::rng::{self, purpose};

use super::nms::{nms, rank_order};
use super::proposals::{generate_proposals, Proposal, ProposalMode};
use super::{Detection, TrainConfig};

/// Per-class scoring vectors built from the frozen few-shot supports. Each
/// vector is the class mean, or the average of
/// `inference.embedding_samples` draws from the class Gaussian unless
/// `inference.mean_only` is set.
pub fn class_embeddings(
    index: &DatasetIndex,
    fewshot: &FewShotSets,
    params: &ExtractorParams,
    cfg: &TrainConfig,
) -> Result<BTreeMap<u32, FeatureVec>> {
    let by_id: BTreeMap<u64, usize> = index.annotations().iter().enumerate().map(|(i, a)| (a.id, i)).collect();
    let mut out = BTreeMap::new();
    for (&class, ids) in &fewshot.per_class {
        let mut feats = Vec::with_capacity(ids.len());
        for id in ids {
            let ann = by_id
                .get(id)
                .map(|&i| &index.annotations()[i])
                .ok_or_else(|| Error::Config(format!("few-shot annotation {id} not in dataset")))?;
            let img = index
                .pixels_by_id(ann.image_id)
                .ok_or(Error::UnknownImage {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                })?;
            let crop = crop_support(img, &ann.bbox, cfg.sampler.context_px, params.patch_size)?;
            feats.push(params.forward(&crop)?.0);
        }
        let ce = class_embedding(&feats)?;
        let inf = &cfg.inference;
        let v = if inf.mean_only || inf.embedding_samples == 0 {
            ce.mean.clone()
        } else {
            ce.sample_mean(inf.embedding_samples, &mut rng::stream(cfg.seed, purpose::INFER, u64::from(class)))
        };
        out.insert(class, FeatureVec::new(v)?);
    }
    Ok(out)
}

/// Cosine score of every proposal against one class; scores below
/// `threshold` are dropped.
pub fn score_proposals(proposals: &[Proposal], class_id: u32, embedding: &FeatureVec, threshold: f64) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for p in proposals {
        if p.feature.dim() != embedding.dim() {
            return Err(Error::DimensionMismatch {
                expected: embedding.dim(),
                got: p.feature.dim(),
            });
        }
        let score = cosine_sim(p.feature.as_slice(), embedding.as_slice())?;
        if score >= threshold {
            out.push(Detection {
                bbox: p.bbox,
                score,
                class_id,
            });
        }
    }
    Ok(out)
}

/// Grid proposals, per-class scoring and NMS, merged in rank order and
/// capped at `inference.max_detections`.
pub fn infer(
    img: &ImageRGB,
    embeddings: &BTreeMap<u32, FeatureVec>,
    params: &ExtractorParams,
    cfg: &TrainConfig,
) -> Result<Vec<Detection>> {
    if embeddings.is_empty() {
        return Ok(Vec::new());
    }
    // the grid is deterministic; this stream is never drawn from
    let mut unused = rng::stream(cfg.seed, purpose::INFER, u64::MAX);
    let proposals = generate_proposals(img, &[], ProposalMode::Infer, &cfg.proposals, params, &mut unused)?;
    let mut merged = Vec::new();
    for (&class, emb) in embeddings {
        let scored = score_proposals(&proposals, class, emb, cfg.inference.score_threshold)?;
        merged.extend(nms(&scored, cfg.inference.nms_iou));
    }
    merged.sort_by(rank_order);
    merged.truncate(cfg.inference.max_detections);
    Ok(merged)
}

/// Run [`infer`] over images of an index, in image order.
pub fn infer_images(
    index: &DatasetIndex,
    positions: &[usize],
    embeddings: &BTreeMap<u32, FeatureVec>,
    params: &ExtractorParams,
    cfg: &TrainConfig,
) -> Result<Vec<DetectionRecord>> {
    let per_image = positions
        .par_iter()
        .map(|&pos| {
            let id = index.images()[pos].id;
            let dets = infer(index.pixels(pos), embeddings, params, cfg).map_err(|e| e.context(format!("image {id}")))?;
            Ok(dets.into_iter().map(|d| d.record(id)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}
