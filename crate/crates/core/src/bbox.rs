use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Whether the box lies inside a `width x height` image.
    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x2() <= f64::from(width)
            && self.y2() <= f64::from(height)
    }

    /// Intersect with the image rectangle. May return a zero-area box.
    pub fn clip(&self, width: u32, height: u32) -> BBox {
        let x1 = self.x.clamp(0.0, f64::from(width));
        let y1 = self.y.clamp(0.0, f64::from(height));
        let x2 = self.x2().clamp(0.0, f64::from(width));
        let y2 = self.y2().clamp(0.0, f64::from(height));
        BBox::new(x1, y1, (x2 - x1).max(0.0), (y2 - y1).max(0.0))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x2().min(other.x2()) - self.x.max(other.x);
        let ih = self.y2().min(other.y2()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union. Errors when both boxes have zero area.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.w < 0.0 || a.h < 0.0 || b.w < 0.0 || b.h < 0.0 {
        return Err(Error::InvalidParam(format!(
            "negative box extent in {a:?} / {b:?}"
        )));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::DegenerateIou);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// IoU that maps the degenerate case to zero. Used on hot paths where one
/// side is known to have positive area.
pub fn iou_or_zero(a: &BBox, b: &BBox) -> f64 {
    iou(a, b).unwrap_or(0.0)
}
