use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

use super::texture::Background;
use super::{add_gaussian_noise, color_jitter, gaussian_blur, paste_on_background, ImageRGB, JitterParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterStage {
    pub prob: f64,
    pub params: JitterParams,
}

impl Default for JitterStage {
    fn default() -> Self {
        JitterStage {
            prob: 0.5,
            params: JitterParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurStage {
    pub prob: f64,
    /// Candidate odd kernel sizes, drawn uniformly.
    pub kernel_sizes: Vec<usize>,
    /// Uniform sigma range `[lo, hi]`.
    pub sigma: [f64; 2],
}

impl Default for BlurStage {
    fn default() -> Self {
        BlurStage {
            prob: 0.5,
            kernel_sizes: vec![3, 5, 7],
            sigma: [0.1, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStage {
    pub prob: f64,
    /// Uniform sigma range in 8-bit units.
    pub sigma: [f64; 2],
}

impl Default for NoiseStage {
    fn default() -> Self {
        NoiseStage {
            prob: 0.5,
            sigma: [1.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSource {
    /// Random flat, checker or smooth-noise textures with random colors.
    #[default]
    Procedural,
    /// PNG files in a directory, loaded by [`AugmentationPipeline::load_backgrounds`].
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundStage {
    pub prob: f64,
    pub source: BackgroundSource,
    #[serde(skip)]
    bank: Arc<Vec<ImageRGB>>,
}

impl PartialEq for BackgroundStage {
    fn eq(&self, other: &Self) -> bool {
        self.prob == other.prob && self.source == other.source
    }
}

impl Default for BackgroundStage {
    fn default() -> Self {
        BackgroundStage {
            prob: 0.5,
            source: BackgroundSource::Procedural,
            bank: Arc::default(),
        }
    }
}

/// Pixel-level augmentation stages, applied in the fixed order
/// jitter, blur, noise, background paste. Each stage fires independently
/// with its own probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct AugmentationPipeline {
    pub jitter: JitterStage,
    pub blur: BlurStage,
    pub noise: NoiseStage,
    pub background: BackgroundStage,
    pub rng_seed: u64,
}


fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "{name} probability must be in [0, 1], got {p}"
        )))
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "{name} range must satisfy {min} <= lo <= hi, got {r:?}"
        )))
    }
}

impl AugmentationPipeline {
    /// Every stage disabled.
    pub fn disabled() -> Self {
        let mut p = AugmentationPipeline::default();
        p.set_all_probs(0.0);
        p
    }

    pub fn set_all_probs(&mut self, prob: f64) {
        self.jitter.prob = prob;
        self.blur.prob = prob;
        self.noise.prob = prob;
        self.background.prob = prob;
    }

    pub fn is_disabled(&self) -> bool {
        self.jitter.prob == 0.0 && self.blur.prob == 0.0 && self.noise.prob == 0.0 && self.background.prob == 0.0
    }

    /// The same pipeline with background paste switched off (used for
    /// support crops, which are never re-backgrounded).
    pub fn without_background(&self) -> Self {
        let mut p = self.clone();
        p.background.prob = 0.0;
        p
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("jitter", self.jitter.prob)?;
        check_prob("blur", self.blur.prob)?;
        check_prob("noise", self.noise.prob)?;
        check_prob("background", self.background.prob)?;
        if self.jitter.prob > 0.0 {
            self.jitter.params.validate()?;
        }
        if self.blur.prob > 0.0 {
            if self.blur.kernel_sizes.is_empty() {
                return Err(Error::InvalidParam("blur needs at least one kernel size".into()));
            }
            if let Some(&k) = self.blur.kernel_sizes.iter().find(|k| *k % 2 == 0) {
                return Err(Error::EvenKernel(k));
            }
            check_range("blur sigma", self.blur.sigma, f64::MIN_POSITIVE)?;
        }
        if self.noise.prob > 0.0 {
            check_range("noise sigma", self.noise.sigma, 0.0)?;
        }
        Ok(())
    }

    /// Load the background bank for [`BackgroundSource::Directory`]. A no-op
    /// for procedural backgrounds.
    pub fn load_backgrounds(&mut self) -> Result<()> {
        if let BackgroundSource::Directory { path } = &self.background.source {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!(
                    "background directory {} has no PNG files",
                    path.display()
                )));
            }
            let bank = files
                .iter()
                .map(|f| ImageRGB::load_png(f))
                .collect::<Result<Vec<_>>>()?;
            self.background.bank = Arc::new(bank);
        }
        Ok(())
    }

    fn draw_background<R: Rng + ?Sized>(&self, width: u32, height: u32, rng: &mut R) -> Result<ImageRGB> {
        match &self.background.source {
            BackgroundSource::Procedural => Ok(Background::random(rng).render(width, height, rng)),
            BackgroundSource::Directory { path } => self
                .background
                .bank
                .choose(rng)
                .cloned()
                .ok_or_else(|| Error::Config(format!("background bank for {} not loaded", path.display()))),
        }
    }

    /// Augment an image. Exactly one uniform is drawn per stage to decide
    /// whether it fires; parameters are drawn only for stages that fire.
    pub fn apply_image<R: Rng + ?Sized>(&self, img: &ImageRGB, boxes: &[BBox], rng: &mut R) -> Result<ImageRGB> {
        let mut out = img.clone();
        if rng.random::<f64>() < self.jitter.prob {
            out = color_jitter(&out, &self.jitter.params, rng);
        }
        if rng.random::<f64>() < self.blur.prob {
            let k = *self
                .blur
                .kernel_sizes
                .choose(rng)
                .ok_or_else(|| Error::InvalidParam("blur needs at least one kernel size".into()))?;
            let sigma = uniform(rng, self.blur.sigma);
            out = gaussian_blur(&out, sigma, k)?;
        }
        if rng.random::<f64>() < self.noise.prob {
            let sigma = uniform(rng, self.noise.sigma);
            out = add_gaussian_noise(&out, sigma, rng)?;
        }
        if rng.random::<f64>() < self.background.prob {
            let bg = self.draw_background(out.width(), out.height(), rng)?;
            out = paste_on_background(&out, boxes, &bg)?;
        }
        Ok(out)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// Anything carrying a box that augmentations must leave untouched.
pub trait HasBox {
    fn bbox(&self) -> BBox;
}

impl HasBox for BBox {
    fn bbox(&self) -> BBox {
        *self
    }
}

/// Run the pipeline on an image and pass its annotations through unchanged.
pub fn apply_pipeline<A: HasBox + Clone, R: Rng + ?Sized>(
    img: &ImageRGB,
    anns: &[A],
    pipeline: &AugmentationPipeline,
    rng: &mut R,
) -> Result<(ImageRGB, Vec<A>)> {
    let boxes: Vec<BBox> = anns.iter().map(HasBox::bbox).collect();
    let out = pipeline.apply_image(img, &boxes, rng)?;
    Ok((out, anns.to_vec()))
}
