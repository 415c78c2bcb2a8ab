use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::{quantize, ImageRGB};

/// Normalized 1-D Gaussian taps `exp(-i^2 / 2 sigma^2)` for `i` in
/// `[-size/2, size/2]`.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::EvenKernel(size));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Separable Gaussian blur with edge-replicate padding. The intermediate
/// horizontal pass stays in floating point; samples are quantized once.
pub fn gaussian_blur(img: &ImageRGB, sigma: f64, kernel_size: usize) -> Result<ImageRGB> {
    let kernel = gaussian_kernel(sigma, kernel_size)?;
    if kernel_size == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = (kernel_size / 2) as i64;
    let src = img.data();
    let idx = |x: i64, y: i64| ((y * w + x) * 3) as usize;

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = (x + k as i64 - r).clamp(0, w - 1);
                let o = idx(sx, y);
                for c in 0..3 {
                    acc[c] += wt * f64::from(src[o + c]);
                }
            }
            let o = idx(x, y);
            horiz[o..o + 3].copy_from_slice(&acc);
        }
    }

    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = (y + k as i64 - r).clamp(0, h - 1);
                let o = idx(x, sy);
                for c in 0..3 {
                    acc[c] += wt * horiz[o + c];
                }
            }
            let o = idx(x, y);
            for c in 0..3 {
                out[o + c] = quantize(acc[c]);
            }
        }
    }
    ImageRGB::from_raw(img.width(), img.height(), out)
}

/// Add i.i.d. `N(0, sigma^2)` noise (8-bit units) to every sample, then round
/// and clamp. `sigma == 0` returns the input unchanged without consuming
/// randomness.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    img: &ImageRGB,
    sigma: f64,
    rng: &mut R,
) -> Result<ImageRGB> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let g: f64 = rng.sample(StandardNormal);
            quantize(f64::from(v) + sigma * g)
        })
        .collect();
    ImageRGB::from_raw(img.width(), img.height(), data)
}
