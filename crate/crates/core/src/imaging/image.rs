use std::path::Path;

use crate::error::{Error, Result};

use super::quantize;

/// 8-bit RGB raster, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRGB {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageRGB {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageRGB({}x{})", self.width, self.height)
    }
}

impl ImageRGB {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(ImageRGB {
            width,
            height,
            data,
        })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        ImageRGB {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &ImageRGB) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear resize with half-pixel center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<ImageRGB> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "resize target must be positive, got {width}x{height}"
            )));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let taps = |dst: u32, scale: f64, max: f64| {
            let src = ((f64::from(dst) + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = src.floor();
            let frac = src - i0;
            let i1 = (i0 + 1.0).min(max);
            (i0 as u32, i1 as u32, frac)
        };
        let xtaps: Vec<_> = (0..width).map(|x| taps(x, sx, max_x)).collect();
        let mut out = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, max_y);
            for &(x0, x1, fx) in &xtaps {
                let p00 = self.pixel(x0, y0);
                let p10 = self.pixel(x1, y0);
                let p01 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..3 {
                    let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                    let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                    out.push(quantize(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
        ImageRGB::from_raw(width, height, out)
    }

    /// Copy of the pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn sub_image(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<ImageRGB> {
        if x1 <= x0 || y1 <= y0 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidImage(format!(
                "sub-image [{x0},{x1})x[{y0},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity((x1 - x0) as usize * (y1 - y0) as usize * 3);
        for y in y0..y1 {
            let a = self.offset(x0, y);
            let b = self.offset(x1 - 1, y) + 3;
            data.extend_from_slice(&self.data[a..b]);
        }
        ImageRGB::from_raw(x1 - x0, y1 - y0, data)
    }

    pub fn load_png(path: &Path) -> Result<ImageRGB> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Codec(other),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        ImageRGB::from_raw(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Codec(other),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageRGB::from_raw(0, 3, vec![]).is_err());
        assert!(ImageRGB::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(ImageRGB::from_raw(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn resize_same_size_is_identity_and_constant_preserved() {
        let mut img = ImageRGB::filled(5, 4, [10, 20, 30]);
        img.set_pixel(2, 1, [200, 0, 9]);
        assert_eq!(img.resize_bilinear(5, 4).unwrap(), img);
        let flat = ImageRGB::filled(7, 3, [40, 50, 60]);
        let big = flat.resize_bilinear(13, 11).unwrap();
        assert!(big.data().chunks(3).all(|p| p == [40, 50, 60]));
    }

    #[test]
    fn upsample_by_two_interpolates() {
        let img = ImageRGB::from_raw(2, 1, vec![0, 0, 0, 100, 100, 100]).unwrap();
        let up = img.resize_bilinear(4, 1).unwrap();
        // src coords: -0.25->0, 0.25, 0.75, 1.25->1
        let r: Vec<u8> = up.data().chunks(3).map(|p| p[0]).collect();
        assert_eq!(r, vec![0, 25, 75, 100]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = ImageRGB::filled(6, 5, [1, 2, 3]);
        img.set_pixel(5, 4, [255, 128, 0]);
        img.save_png(&path).unwrap();
        assert_eq!(ImageRGB::load_png(&path).unwrap(), img);
    }
}
