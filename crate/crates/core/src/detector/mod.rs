//! Toy proposal-scoring detector: cosine similarity between proposal
//! features and class embeddings, trained episodically on base classes and
//! fine-tuned on novel few-shot sets.

mod checkpoint;
mod infer;
mod nms;
mod proposals;
mod train;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::embedding::{CfceConfig, Trainable};
use crate::episodic::{MdtsPolicy, SamplerConfig};
use crate::error::{Error, Result};
use crate::imaging::AugmentationPipeline;
use crate::metrics::DetectionRecord;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use infer::{class_embeddings, infer, infer_images, score_proposals};
pub use nms::{nms, rank_order};
pub use proposals::{generate_proposals, grid_boxes, training_boxes, Label, Proposal, ProposalConfig, ProposalMode};
pub use train::{init_params, meta_test, meta_train, TrainOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Cosine similarity, in `[-1, 1]`.
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn record(&self, image_id: u64) -> DetectionRecord {
        DetectionRecord {
            image_id,
            category_id: self.class_id,
            bbox: self.bbox,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub episodes: usize,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate after the step decay.
    pub lr_final: f64,
    /// Fraction of the episodes after which the rate drops to `lr_final`.
    pub decay_at: f64,
    pub clip_norm: Option<f64>,
    /// Apply the pixel-level augmentation pipeline to queries and supports.
    pub augment: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            episodes: 2000,
            batch_size: 4,
            lr: 0.01,
            lr_final: 0.001,
            decay_at: 0.75,
            clip_norm: Some(5.0),
            augment: false,
        }
    }
}

impl MetaTrainConfig {
    pub fn lr_at(&self, episode: usize) -> f64 {
        if (episode as f64) < self.decay_at * self.episodes as f64 {
            self.lr
        } else {
            self.lr_final
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTestConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub augment: bool,
    /// Sample class embeddings from their per-dimension Gaussian each
    /// iteration instead of using the mean.
    pub feature_aug: bool,
    /// Tensors updated during fine-tuning.
    pub trainable: Trainable,
}

impl Default for MetaTestConfig {
    fn default() -> Self {
        MetaTestConfig {
            iterations: 500,
            batch_size: 1,
            lr: 1e-5,
            clip_norm: Some(5.0),
            augment: false,
            feature_aug: false,
            trainable: Trainable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    /// Sampled embeddings averaged per class; ignored when `mean_only`.
    pub embedding_samples: usize,
    pub mean_only: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            score_threshold: 0.0,
            nms_iou: 0.3,
            max_detections: 100,
            embedding_samples: 8,
            mean_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub feature_dim: usize,
    /// Multiplier on the cosine score inside the fg/bg hinge. At 1 the hinge
    /// never saturates; larger values stop pushing proposals already scored
    /// beyond `1 / score_scale` on the correct side.
    pub score_scale: f64,
    pub sampler: SamplerConfig,
    pub meta_train: MetaTrainConfig,
    pub meta_test: MetaTestConfig,
    pub proposals: ProposalConfig,
    pub inference: InferenceConfig,
    pub pipeline: AugmentationPipeline,
    pub mdts: MdtsPolicy,
    pub cfce: CfceConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            feature_dim: 64,
            score_scale: 4.0,
            sampler: SamplerConfig::default(),
            meta_train: MetaTrainConfig::default(),
            meta_test: MetaTestConfig::default(),
            proposals: ProposalConfig::default(),
            inference: InferenceConfig::default(),
            pipeline: AugmentationPipeline::default(),
            mdts: MdtsPolicy::default(),
            cfce: CfceConfig::default(),
            seed: 0,
        }
    }
}

fn positive_rate(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidParam("feature_dim must be positive".into()));
        }
        if self.sampler.shots == 0 || self.sampler.support_size == 0 {
            return Err(Error::InvalidParam("shots and support_size must be positive".into()));
        }
        if self.meta_train.batch_size == 0 || self.meta_test.batch_size == 0 {
            return Err(Error::InvalidParam("batch sizes must be positive".into()));
        }
        positive_rate("score_scale", self.score_scale)?;
        positive_rate("meta_train.lr", self.meta_train.lr)?;
        positive_rate("meta_train.lr_final", self.meta_train.lr_final)?;
        positive_rate("meta_test.lr", self.meta_test.lr)?;
        if !(0.0..=1.0).contains(&self.meta_train.decay_at) {
            return Err(Error::InvalidParam("meta_train.decay_at must be in [0, 1]".into()));
        }
        for clip in [self.meta_train.clip_norm, self.meta_test.clip_norm].into_iter().flatten() {
            positive_rate("clip_norm", clip)?;
        }
        let inf = &self.inference;
        if !inf.score_threshold.is_finite() {
            return Err(Error::InvalidParam("score_threshold must be finite".into()));
        }
        if !(0.0..=1.0).contains(&inf.nms_iou) {
            return Err(Error::InvalidParam(format!("nms_iou must be in [0, 1], got {}", inf.nms_iou)));
        }
        self.proposals.validate()?;
        self.pipeline.validate()?;
        self.mdts.validate()?;
        self.cfce.validate()?;
        Ok(())
    }
}
