use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{luma, quantize, ImageRGB};

/// Ranges for the four color-jitter adjustments.
///
/// Each call draws `brightness_delta ~ U[-b, b]`, `contrast_factor ~ U[1-c, 1+c]`,
/// `saturation_factor ~ U[1-s, 1+s]` and `hue_delta ~ U[-h, h]` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 18.0,
        }
    }
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParam(format!(
                    "jitter {name} range must be in [0, 1), got {v}"
                )));
            }
        }
        if !(0.0..180.0).contains(&self.hue) {
            return Err(Error::InvalidParam(format!(
                "jitter hue range must be in [0, 180) degrees, got {}",
                self.hue
            )));
        }
        Ok(())
    }

    /// Draw concrete factors. Always consumes exactly four uniforms.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JitterFactors {
        let mut sym = |r: f64| r * (2.0 * rng.random::<f64>() - 1.0);
        JitterFactors {
            brightness_delta: sym(self.brightness),
            contrast_factor: 1.0 + sym(self.contrast),
            saturation_factor: 1.0 + sym(self.saturation),
            hue_delta: sym(self.hue),
        }
    }
}

/// Concrete jitter adjustments applied to one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    /// Added to every channel as `delta * 255`.
    pub brightness_delta: f64,
    /// Scales deviations from the mean luma of the image.
    pub contrast_factor: f64,
    /// Interpolates each pixel toward its own luma (0 = grayscale).
    pub saturation_factor: f64,
    /// Hue rotation in degrees (HSV).
    pub hue_delta: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness_delta: 0.0,
        contrast_factor: 1.0,
        saturation_factor: 1.0,
        hue_delta: 0.0,
    };
}

/// Random color jitter; see [`apply_jitter`] for the adjustment order.
pub fn color_jitter<R: Rng + ?Sized>(img: &ImageRGB, params: &JitterParams, rng: &mut R) -> ImageRGB {
    let factors = params.sample(rng);
    apply_jitter(img, &factors)
}

/// Apply brightness, contrast, saturation and hue, in that order, in floating
/// point with clamping to `[0, 255]` after each step and a single rounding at
/// the end.
pub fn apply_jitter(img: &ImageRGB, f: &JitterFactors) -> ImageRGB {
    let mut px: Vec<[f64; 3]> = img
        .data()
        .chunks_exact(3)
        .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
        .collect();

    if f.brightness_delta != 0.0 {
        let add = f.brightness_delta * 255.0;
        for p in &mut px {
            for c in p.iter_mut() {
                *c = (*c + add).clamp(0.0, 255.0);
            }
        }
    }

    if f.contrast_factor != 1.0 {
        let mean = px.iter().map(|p| luma(p[0], p[1], p[2])).sum::<f64>() / px.len() as f64;
        for p in &mut px {
            for c in p.iter_mut() {
                *c = (mean + (*c - mean) * f.contrast_factor).clamp(0.0, 255.0);
            }
        }
    }

    if f.saturation_factor != 1.0 {
        for p in &mut px {
            let l = luma(p[0], p[1], p[2]);
            for c in p.iter_mut() {
                *c = (l + (*c - l) * f.saturation_factor).clamp(0.0, 255.0);
            }
        }
    }

    if f.hue_delta != 0.0 {
        for p in &mut px {
            *p = rotate_hue(*p, f.hue_delta);
        }
    }

    let data = px.iter().flat_map(|p| p.map(quantize)).collect();
    ImageRGB::from_raw(img.width(), img.height(), data).expect("dimensions unchanged")
}

fn rotate_hue(rgb: [f64; 3], delta_deg: f64) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma <= 0.0 {
        return rgb;
    }
    let h = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    let h = (h * 60.0 + delta_deg).rem_euclid(360.0) / 60.0;
    let x = chroma * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    [r1 + min, g1 + min, b1 + min].map(|v| v.clamp(0.0, 255.0))
}
