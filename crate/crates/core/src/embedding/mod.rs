//! Feature extraction, class embeddings and the contrastive
//! foreground/class-embedding (CFCE) loss.

mod cfce;
mod class_embedding;
mod features;
pub mod gradcheck;
mod optim;

pub use cfce::{cfce_grad, cfce_loss, cosine_grad, cosine_sim, CfceConfig, CfceGrad, Phase};
pub use class_embedding::{class_embedding, sample_embedding, ClassEmbedding};
pub use features::{
    extract_features, ExtractorGrads, ExtractorParams, FeatureCache, FeatureVec, Trainable,
};
pub use optim::sgd_step;
