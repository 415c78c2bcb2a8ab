use crate::bbox::BBox;
use crate::error::{Error, Result};

use super::ImageRGB;

/// Integer pixel rectangle `[x0, x1) x [y0, y1)` covered by a box: floor of
/// the top-left corner, ceiling of the bottom-right, clipped to the image.
pub fn box_pixel_span(bbox: &BBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clampx = |v: f64| v.clamp(0.0, f64::from(width)) as u32;
    let clampy = |v: f64| v.clamp(0.0, f64::from(height)) as u32;
    (
        clampx(bbox.x.floor()),
        clampy(bbox.y.floor()),
        clampx(bbox.x2().ceil()),
        clampy(bbox.y2().ceil()),
    )
}

fn check_inside(bbox: &BBox, img: &ImageRGB) -> Result<()> {
    if !bbox.is_finite() || bbox.w < 0.0 || bbox.h < 0.0 || !bbox.within(img.width(), img.height()) {
        return Err(Error::BoxOutOfBounds {
            bbox: bbox.to_array(),
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

/// Resize `background` to the size of `img` and copy every box region of
/// `img` onto it at the same coordinates. Box geometry is untouched, so the
/// caller's annotations stay valid.
pub fn paste_on_background(img: &ImageRGB, boxes: &[BBox], background: &ImageRGB) -> Result<ImageRGB> {
    for b in boxes {
        check_inside(b, img)?;
    }
    let mut out = background.resize_bilinear(img.width(), img.height())?;
    let w = img.width() as usize;
    for b in boxes {
        let (x0, y0, x1, y1) = box_pixel_span(b, img.width(), img.height());
        if x1 <= x0 {
            continue;
        }
        for y in y0..y1 {
            let a = (y as usize * w + x0 as usize) * 3;
            let e = (y as usize * w + x1 as usize) * 3;
            out.data_mut()[a..e].copy_from_slice(&img.data()[a..e]);
        }
    }
    Ok(out)
}

/// Crop around `bbox` with `context_px` pixels of surrounding image on every
/// side (clipped at the image border), zero-pad the crop to a centered square
/// and resize it to `out_size x out_size`.
pub fn crop_support(img: &ImageRGB, bbox: &BBox, context_px: u32, out_size: u32) -> Result<ImageRGB> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::ZeroAreaBox(bbox.to_array()));
    }
    check_inside(bbox, img)?;
    if out_size == 0 {
        return Err(Error::InvalidParam("crop out_size must be positive".into()));
    }
    let c = f64::from(context_px);
    let window = BBox::new(bbox.x - c, bbox.y - c, bbox.w + 2.0 * c, bbox.h + 2.0 * c);
    let (x0, y0, x1, y1) = box_pixel_span(&window, img.width(), img.height());
    let (ww, wh) = (x1 - x0, y1 - y0);
    if ww == 0 || wh == 0 {
        return Err(Error::ZeroAreaBox(bbox.to_array()));
    }
    let side = ww.max(wh);
    let crop = img.sub_image(x0, y0, x1, y1)?;
    let padded = if ww == wh {
        crop
    } else {
        let mut sq = ImageRGB::filled(side, side, [0, 0, 0]);
        let (ox, oy) = ((side - ww) / 2, (side - wh) / 2);
        let row = ww as usize * 3;
        for y in 0..wh as usize {
            let dst = ((y + oy as usize) * side as usize + ox as usize) * 3;
            sq.data_mut()[dst..dst + row].copy_from_slice(&crop.data()[y * row..(y + 1) * row]);
        }
        sq
    };
    padded.resize_bilinear(out_size, out_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> ImageRGB {
        let mut img = ImageRGB::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [(x * 3) as u8, (y * 5) as u8, 99]);
            }
        }
        img
    }

    #[test]
    fn full_frame_paste_returns_image() {
        let img = gradient(20, 10);
        let bg = ImageRGB::filled(7, 9, [0, 0, 255]);
        let out = paste_on_background(&img, &[BBox::new(0.0, 0.0, 20.0, 10.0)], &bg).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn empty_paste_returns_resized_background() {
        let img = gradient(20, 10);
        let bg = gradient(40, 20);
        let out = paste_on_background(&img, &[], &bg).unwrap();
        assert_eq!(out, bg.resize_bilinear(20, 10).unwrap());
    }

    #[test]
    fn ten_by_ten_paste_changes_exactly_100_pixels() {
        let img = ImageRGB::filled(64, 64, [200, 10, 10]);
        let bg = ImageRGB::filled(64, 64, [0, 0, 255]);
        let out = paste_on_background(&img, &[BBox::new(5.0, 5.0, 10.0, 10.0)], &bg).unwrap();
        let diff = out.data().chunks(3).filter(|p| *p != [0, 0, 255]).count();
        assert_eq!(diff, 100);
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let img = gradient(20, 10);
        let bg = gradient(20, 10);
        let err = paste_on_background(&img, &[BBox::new(15.0, 0.0, 10.0, 5.0)], &bg);
        assert!(matches!(err, Err(Error::BoxOutOfBounds { .. })));
    }

    #[test]
    fn identity_crop() {
        let img = gradient(16, 16);
        let out = crop_support(&img, &BBox::new(0.0, 0.0, 16.0, 16.0), 0, 16).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn rectangular_crop_is_centered_with_zero_bands() {
        // 10 wide x 20 tall: padded square 20x20 with 5-pixel zero bands left and right
        let img = ImageRGB::filled(40, 40, [255, 255, 255]);
        let out = crop_support(&img, &BBox::new(10.0, 10.0, 10.0, 20.0), 0, 20).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let inside = (5..15).contains(&x);
                let expected = if inside { [255; 3] } else { [0; 3] };
                assert_eq!(out.pixel(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn context_is_clipped_at_corner() {
        let img = gradient(64, 64);
        let out = crop_support(&img, &BBox::new(0.0, 0.0, 8.0, 12.0), 16, 32).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
    }

    #[test]
    fn zero_area_rejected() {
        let img = gradient(10, 10);
        assert!(matches!(
            crop_support(&img, &BBox::new(2.0, 2.0, 0.0, 3.0), 4, 8),
            Err(Error::ZeroAreaBox(_))
        ));
    }
}
