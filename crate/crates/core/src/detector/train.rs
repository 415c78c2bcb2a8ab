use rand::Rng;
use rayon::prelude::*;

use crate::bbox::BBox;
use crate::embedding::{
    cfce_grad, class_embedding, cosine_grad, sgd_step, ClassEmbedding, ExtractorGrads, ExtractorParams, FeatureCache,
    FeatureVec, Phase,
};
use crate::episodic::{Annotation, DatasetView, EpisodeSampler, SamplerConfig};
use crate::error::Result;
use crate::imaging::ImageRGB;
use crate::rng::{self, purpose};

use super::proposals::{generate_proposals, Label, ProposalMode};
use super::TrainConfig;

/// Offset separating meta-test pipeline streams from meta-train ones.
const META_TEST_STREAM: u64 = 1 << 40;

/// Parameters after a training phase and the per-episode (or per-iteration)
/// loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ExtractorParams,
    pub loss_trace: Vec<f64>,
    /// The fg/bg hinge part of each loss, without the contrastive term.
    pub detection_trace: Vec<f64>,
}

/// Seeded initial extractor for a config.
pub fn init_params(cfg: &TrainConfig) -> ExtractorParams {
    ExtractorParams::random(
        cfg.feature_dim,
        cfg.sampler.support_size,
        &mut rng::stream(cfg.seed, purpose::INIT, 0),
    )
}

struct Embedded {
    ce: ClassEmbedding,
    features: Vec<FeatureVec>,
    caches: Vec<FeatureCache>,
    /// The vector used for scoring and its Gaussian noise, if sampled.
    vector: Vec<f64>,
    noise: Option<Vec<f64>>,
}

fn embed_supports<R: Rng + ?Sized>(crops: &[ImageRGB], params: &ExtractorParams, sample: Option<&mut R>) -> Result<Embedded> {
    let mut features = Vec::with_capacity(crops.len());
    let mut caches = Vec::with_capacity(crops.len());
    for crop in crops {
        let (f, c) = params.forward(crop)?;
        features.push(f);
        caches.push(c);
    }
    let ce = class_embedding(&features)?;
    let (vector, noise) = match sample {
        Some(rng) => {
            let (v, g) = ce.sample_with_noise(rng);
            (v, Some(g))
        }
        None => (ce.mean.clone(), None),
    };
    Ok(Embedded {
        ce,
        features,
        caches,
        vector,
        noise,
    })
}

fn backprop_supports(e: &Embedded, grad: &[f64], params: &ExtractorParams, grads: &mut ExtractorGrads) {
    let per_support = e.ce.backward(&e.features, e.noise.as_deref(), grad);
    for ((f, c), g) in e.features.iter().zip(&e.caches).zip(&per_support) {
        c.backward(f, g, params, grads);
    }
}

/// Everything one episode contributes to an optimizer step.
pub(crate) struct EpisodeData<'a> {
    pub query: &'a ImageRGB,
    pub positives: &'a [Annotation],
    pub positive_supports: &'a [ImageRGB],
    pub negative_supports: &'a [ImageRGB],
}

/// Loss and parameter gradient of one episode.
///
/// Each proposal is scored by scaled cosine similarity `s = k cos` to the
/// positive class embedding with a hinge `max(0, 1 - y s)`, `y = +1` for
/// foreground and `-1` for background. Foreground proposals are also scored against the
/// negative class embedding with `y = -1`. The CFCE term is added when
/// enabled for `phase`.
pub(crate) fn episode_step<R: Rng + ?Sized, F: Rng + ?Sized>(
    data: &EpisodeData<'_>,
    params: &ExtractorParams,
    cfg: &TrainConfig,
    phase: Phase,
    rng: &mut R,
    feature_rng: Option<&mut F>,
) -> Result<(f64, f64, ExtractorGrads)> {
    let (pos, neg) = match feature_rng {
        Some(fr) => {
            let pos = embed_supports(data.positive_supports, params, Some(&mut *fr))?;
            let neg = embed_supports(data.negative_supports, params, Some(&mut *fr))?;
            (pos, neg)
        }
        None => (
            embed_supports::<F>(data.positive_supports, params, None)?,
            embed_supports::<F>(data.negative_supports, params, None)?,
        ),
    };
    let proposals = generate_proposals(data.query, data.positives, ProposalMode::Train, &cfg.proposals, params, rng)?;
    let dim = params.feature_dim;
    let mut grad_pos = vec![0.0; dim];
    let mut grad_neg = vec![0.0; dim];
    let mut grad_props: Vec<Vec<f64>> = vec![vec![0.0; dim]; proposals.len()];
    let fg: Vec<usize> = (0..proposals.len())
        .filter(|&i| proposals[i].label == Some(Label::Foreground))
        .collect();
    let terms = proposals.len() + fg.len();
    let mut loss = 0.0;
    if terms > 0 {
        let w = 1.0 / terms as f64;
        let k = cfg.score_scale;
        let hinge = |i: usize, target: &[f64], y: f64, grad_target: &mut [f64], grad_props: &mut [Vec<f64>]| -> Result<f64> {
            let (s, gf, gc) = cosine_grad(proposals[i].feature.as_slice(), target)?;
            let l = 1.0 - y * k * s;
            if l > 0.0 {
                for d in 0..dim {
                    grad_props[i][d] -= w * y * k * gf[d];
                    grad_target[d] -= w * y * k * gc[d];
                }
                Ok(w * l)
            } else {
                Ok(0.0)
            }
        };
        for (i, p) in proposals.iter().enumerate() {
            let y = if p.label == Some(Label::Foreground) { 1.0 } else { -1.0 };
            loss += hinge(i, &pos.vector, y, &mut grad_pos, &mut grad_props)?;
        }
        for &i in &fg {
            loss += hinge(i, &neg.vector, -1.0, &mut grad_neg, &mut grad_props)?;
        }
    }
    let detection = loss;
    if cfg.cfce.enabled_in(phase) && !fg.is_empty() {
        let feats: Vec<&[f64]> = fg.iter().map(|&i| proposals[i].feature.as_slice()).collect();
        let g = cfce_grad(&feats, &pos.vector, &neg.vector, cfg.cfce.margin)?;
        let w = cfg.cfce.loss_weight;
        loss += w * g.loss;
        for (k, &i) in fg.iter().enumerate() {
            for d in 0..dim {
                grad_props[i][d] += w * g.query[k][d];
            }
        }
        for d in 0..dim {
            grad_pos[d] += w * g.c_pos[d];
            grad_neg[d] += w * g.c_neg[d];
        }
    }
    let mut grads = ExtractorGrads::zeros_like(params);
    for (p, g) in proposals.iter().zip(&grad_props) {
        p.cache.backward(&p.feature, g, params, &mut grads);
    }
    backprop_supports(&pos, &grad_pos, params, &mut grads);
    backprop_supports(&neg, &grad_neg, params, &mut grads);
    Ok((loss, detection, grads))
}

struct Prepared {
    query: ImageRGB,
    positives: Vec<Annotation>,
    positive_supports: Vec<ImageRGB>,
    negative_supports: Vec<ImageRGB>,
}

/// Sample an episode and apply the pixel pipeline when `augment` is set.
fn prepare<R: Rng + ?Sized>(
    sampler: &EpisodeSampler<'_>,
    cfg: &TrainConfig,
    augment: bool,
    pipeline_index: u64,
    rng: &mut R,
) -> Result<Prepared> {
    let plan = sampler.plan(rng)?;
    let ep = sampler.materialize(&plan)?;
    let mut out = Prepared {
        query: ep.query,
        positives: ep.query_annotations,
        positive_supports: ep.positive_supports.into_iter().map(|s| s.image).collect(),
        negative_supports: ep.negative_supports.into_iter().map(|s| s.image).collect(),
    };
    if augment {
        let mut prng = rng::stream(cfg.seed ^ cfg.pipeline.rng_seed, purpose::PIPELINE, pipeline_index);
        let keep: Vec<BBox> = sampler.view().annotations_in(plan.query_image).map(|(_, a)| a.bbox).collect();
        out.query = cfg.pipeline.apply_image(&out.query, &keep, &mut prng)?;
        let support_pipe = cfg.pipeline.without_background();
        for crop in out.positive_supports.iter_mut().chain(out.negative_supports.iter_mut()) {
            *crop = support_pipe.apply_image(crop, &[], &mut prng)?;
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Traces {
    loss: Vec<f64>,
    detection: Vec<f64>,
}

impl Traces {
    fn finish(self, params: ExtractorParams) -> TrainOutput {
        TrainOutput {
            params,
            loss_trace: self.loss,
            detection_trace: self.detection,
        }
    }
}

fn apply_batch(params: &mut ExtractorParams, results: Vec<(f64, f64, ExtractorGrads)>, lr: f64, clip: Option<f64>, traces: &mut Traces) -> Result<()> {
    let n = results.len() as f64;
    let mut total = ExtractorGrads::zeros_like(params);
    for (loss, detection, g) in &results {
        traces.loss.push(*loss);
        traces.detection.push(*detection);
        total.add_assign(g);
    }
    total.scale(1.0 / n);
    sgd_step(params, &total, lr, clip)?;
    Ok(())
}

/// Episodic training on the base-class view under the configured mixed
/// domain policy. Episode `i` uses its own random stream, so the result does
/// not depend on how many threads evaluate a batch.
pub fn meta_train(base_view: &DatasetView<'_>, init: ExtractorParams, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    init.validate()?;
    let mc = &cfg.meta_train;
    let mut params = init;
    let mut traces = Traces::default();
    if mc.episodes == 0 {
        return Ok(traces.finish(params));
    }
    let sampler = EpisodeSampler::new(
        base_view.clone(),
        cfg.mdts.clone(),
        cfg.sampler.clone(),
        &mut rng::stream(cfg.seed, purpose::TARGET_BUDGET, 0),
    )?;
    let mut start = 0;
    while start < mc.episodes {
        let end = (start + mc.batch_size).min(mc.episodes);
        let snapshot = &params;
        let results = (start..end)
            .into_par_iter()
            .map(|ep| {
                let mut r = rng::stream(cfg.seed, purpose::META_TRAIN, ep as u64);
                let data = prepare(&sampler, cfg, mc.augment, ep as u64, &mut r)?;
                episode_step::<_, rng::Rng>(
                    &EpisodeData {
                        query: &data.query,
                        positives: &data.positives,
                        positive_supports: &data.positive_supports,
                        negative_supports: &data.negative_supports,
                    },
                    snapshot,
                    cfg,
                    Phase::MetaTrain,
                    &mut r,
                    None,
                )
                .map_err(|e| e.context(format!("meta-train episode {ep}")))
            })
            .collect::<Result<Vec<_>>>()?;
        apply_batch(&mut params, results, mc.lr_at(start), mc.clip_norm, &mut traces)?;
        start = end;
    }
    Ok(traces.finish(params))
}

/// Fine-tune on the frozen novel few-shot view. Supports are drawn with
/// replacement from the other shots of each class; only the tensors flagged
/// in `meta_test.trainable` change.
pub fn meta_test(fewshot_view: &DatasetView<'_>, params: ExtractorParams, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    params.validate()?;
    let mc = &cfg.meta_test;
    let original_flags = params.trainable;
    let mut params = params;
    let mut traces = Traces::default();
    if mc.iterations == 0 {
        return Ok(traces.finish(params));
    }
    params.trainable = mc.trainable;
    let sampler_cfg = SamplerConfig {
        with_replacement: true,
        ..cfg.sampler.clone()
    };
    let sampler = EpisodeSampler::new(
        fewshot_view.clone(),
        cfg.mdts.clone(),
        sampler_cfg,
        &mut rng::stream(cfg.seed, purpose::TARGET_BUDGET, 1),
    )?;
    let mut start = 0;
    while start < mc.iterations {
        let end = (start + mc.batch_size).min(mc.iterations);
        let snapshot = &params;
        let results = (start..end)
            .into_par_iter()
            .map(|it| {
                let mut r = rng::stream(cfg.seed, purpose::META_TEST, it as u64);
                let data = prepare(&sampler, cfg, mc.augment, META_TEST_STREAM | it as u64, &mut r)?;
                let episode = EpisodeData {
                    query: &data.query,
                    positives: &data.positives,
                    positive_supports: &data.positive_supports,
                    negative_supports: &data.negative_supports,
                };
                let out = if mc.feature_aug {
                    let mut fr = rng::stream(cfg.seed, purpose::FEATURE_AUG, it as u64);
                    episode_step(&episode, snapshot, cfg, Phase::MetaTest, &mut r, Some(&mut fr))
                } else {
                    episode_step::<_, rng::Rng>(&episode, snapshot, cfg, Phase::MetaTest, &mut r, None)
                };
                out.map_err(|e| e.context(format!("meta-test iteration {it}")))
            })
            .collect::<Result<Vec<_>>>()?;
        apply_batch(&mut params, results, mc.lr, mc.clip_norm, &mut traces)?;
        start = end;
    }
    params.trainable = original_flags;
    Ok(traces.finish(params))
}

impl From<TrainOutput> for ExtractorParams {
    fn from(t: TrainOutput) -> Self {
        t.params
    }
}
