//! RGB rasters and pixel-level domain randomization.
//!
//! All augmentations are geometry-preserving: they never move, resize or drop
//! annotations. Quantization to 8 bits happens once per operation, after all
//! floating-point arithmetic in that operation, so results are reproducible
//! from the seed alone.

mod compose;
mod filters;
mod image;
mod jitter;
mod pipeline;
pub mod texture;

pub use compose::{box_pixel_span, crop_support, paste_on_background};
pub use filters::{add_gaussian_noise, gaussian_blur, gaussian_kernel};
pub use image::ImageRGB;
pub use jitter::{apply_jitter, color_jitter, JitterFactors, JitterParams};
pub use pipeline::{
    apply_pipeline, AugmentationPipeline, HasBox, BackgroundSource, BackgroundStage, BlurStage,
    JitterStage, NoiseStage,
};

/// Rec.601 luma.
#[inline]
pub(crate) fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
