//! Detection datasets, base/novel partitioning and episodic sampling.

mod dataset;
mod fewshot;
mod sampler;
mod split;
mod view;

pub use dataset::{load_annotations, load_dataset, Annotation, DatasetIndex, Domain, ImageEntry};
pub use fewshot::{enumerate_fewshot, FewShotSets};
pub use sampler::{
    sample_episode, Episode, EpisodePlan, EpisodeSampler, MdtsPolicy, SamplerConfig, SupportCrop,
    SupportMix, SupportRef,
};
pub use split::SplitConfig;
pub use view::{partition, DatasetView};
