//! Procedural backgrounds shared by the synthetic scene generator and the
//! background-paste augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{quantize, ImageRGB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    Flat {
        color: [u8; 3],
    },
    /// Two-color checkerboard with square cells of `cell` pixels and a random
    /// phase per rendering.
    Checker {
        a: [u8; 3],
        b: [u8; 3],
        cell: u32,
    },
    /// Bilinearly interpolated value noise around `base`; `amplitude` is the
    /// peak deviation in 8-bit units, `scale` the lattice spacing in pixels.
    SmoothNoise {
        base: [u8; 3],
        amplitude: f64,
        scale: u32,
    },
}

impl Background {
    pub fn validate(&self) -> Result<()> {
        match self {
            Background::Flat { .. } => Ok(()),
            Background::Checker { cell, .. } if *cell == 0 => {
                Err(Error::InvalidParam("checker cell must be positive".into()))
            }
            Background::SmoothNoise {
                amplitude, scale, ..
            } if *scale == 0 || !(0.0..=255.0).contains(amplitude) => Err(Error::InvalidParam(
                "smooth noise needs scale > 0 and amplitude in [0, 255]".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn render<R: Rng + ?Sized>(&self, width: u32, height: u32, rng: &mut R) -> ImageRGB {
        match *self {
            Background::Flat { color } => ImageRGB::filled(width, height, color),
            Background::Checker { a, b, cell } => {
                let px: u32 = rng.random_range(0..cell);
                let py: u32 = rng.random_range(0..cell);
                let mut img = ImageRGB::filled(width, height, a);
                for y in 0..height {
                    for x in 0..width {
                        if ((x + px) / cell + (y + py) / cell) % 2 == 1 {
                            img.set_pixel(x, y, b);
                        }
                    }
                }
                img
            }
            Background::SmoothNoise {
                base,
                amplitude,
                scale,
            } => {
                let gw = (width / scale + 2) as usize;
                let gh = (height / scale + 2) as usize;
                let lattice: Vec<f64> = (0..gw * gh)
                    .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                    .collect();
                let s = f64::from(scale);
                let mut data = Vec::with_capacity(width as usize * height as usize * 3);
                for y in 0..height {
                    let fy = f64::from(y) / s;
                    let (iy, ty) = (fy.floor() as usize, fy - fy.floor());
                    for x in 0..width {
                        let fx = f64::from(x) / s;
                        let (ix, tx) = (fx.floor() as usize, fx - fx.floor());
                        let at = |i: usize, j: usize| lattice[j * gw + i];
                        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                        let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                        let v = amplitude * (top * (1.0 - ty) + bot * ty);
                        data.extend(base.iter().map(|&c| quantize(f64::from(c) + v)));
                    }
                }
                ImageRGB::from_raw(width, height, data).expect("valid size")
            }
        }
    }

    /// A random background of random kind and colors, standing in for a bank
    /// of real clutter images.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Background {
        let color = |rng: &mut R| -> [u8; 3] { [rng.random(), rng.random(), rng.random()] };
        match rng.random_range(0..3u32) {
            0 => Background::Flat { color: color(rng) },
            1 => Background::Checker {
                a: color(rng),
                b: color(rng),
                cell: rng.random_range(3..=12),
            },
            _ => Background::SmoothNoise {
                base: color(rng),
                amplitude: rng.random_range(10.0..80.0),
                scale: rng.random_range(4..=16),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn checker_uses_both_colors() {
        let bg = Background::Checker {
            a: [0, 0, 0],
            b: [255, 255, 255],
            cell: 4,
        };
        let img = bg.render(16, 16, &mut rng::stream(1, 0, 0));
        let white = img.data().chunks(3).filter(|p| p[0] == 255).count();
        assert_eq!(white, 128);
    }

    #[test]
    fn smooth_noise_stays_near_base() {
        let bg = Background::SmoothNoise {
            base: [100, 100, 100],
            amplitude: 20.0,
            scale: 8,
        };
        let img = bg.render(32, 32, &mut rng::stream(2, 0, 0));
        assert!(img.data().iter().all(|&v| (80..=120).contains(&v)));
    }

    #[test]
    fn serde_shape() {
        let bg: Background =
            serde_json::from_str(r#"{"kind":"checker","a":[1,2,3],"b":[4,5,6],"cell":8}"#).unwrap();
        assert!(matches!(bg, Background::Checker { cell: 8, .. }));
    }
}
