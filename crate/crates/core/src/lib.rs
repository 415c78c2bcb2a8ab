//! Harness for few-shot object detection under an unseen domain shift.
//!
//! The crate is organised bottom-up:
//!
//! - [`imaging`]: the RGB raster type and the pixel-level domain-randomization
//!   augmentations (color jitter, Gaussian blur, Gaussian noise, background
//!   paste) plus support-crop preparation.
//! - [`episodic`]: detection datasets, base/novel partitioning and the
//!   mixed-domain episode sampler.
//! - [`embedding`]: the toy feature extractor, class embeddings with
//!   feature-level Gaussian augmentation, and the contrastive
//!   foreground/class-embedding loss with analytic gradients.
//! - [`detector`]: proposal generation, cosine scoring, NMS, the two training
//!   phases and inference.
//! - [`metrics`]: IoU, matching and COCO-style AP/AR, with an independent
//!   brute-force evaluator.
//! - [`synthgen`]: a deterministic generator of paired-domain synthetic shape
//!   datasets with a controllable domain gap.
//! - [`bench`] and [`config`]: end-to-end experiment orchestration.

pub mod bbox;
pub mod bench;
pub mod config;
pub mod detector;
pub mod embedding;
pub mod episodic;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod rng;
pub mod synthgen;

pub use bbox::BBox;
pub use error::{Error, ErrorKind, Result};
pub use imaging::ImageRGB;
