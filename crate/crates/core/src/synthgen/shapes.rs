use serde::{Deserialize, Serialize};

/// The six shape classes, with their category ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disc = 1,
    Square = 2,
    Triangle = 3,
    Ring = 4,
    Cross = 5,
    Diamond = 6,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Disc,
        Shape::Square,
        Shape::Triangle,
        Shape::Ring,
        Shape::Cross,
        Shape::Diamond,
    ];

    pub fn class_id(self) -> u32 {
        self as u32
    }

    pub fn from_class_id(id: u32) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.class_id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
            Shape::Cross => "cross",
            Shape::Diamond => "diamond",
        }
    }

    /// Membership test in coordinates normalized to `[-1, 1]^2` over the
    /// shape's nominal square.
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Disc => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Triangle => (-0.9..=0.9).contains(&v) && u.abs() <= 0.95 * (v + 0.9) / 1.8,
            Shape::Ring => (0.3025..=1.0).contains(&(u * u + v * v)),
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            Shape::Diamond => u.abs() + v.abs() <= 1.0,
        }
    }

    /// Rasterize at pixel centers into a `size x size` mask.
    pub fn mask(self, size: u32) -> Vec<bool> {
        let half = f64::from(size) / 2.0;
        let mut out = Vec::with_capacity((size * size) as usize);
        for y in 0..size {
            let v = (f64::from(y) + 0.5 - half) / half;
            for x in 0..size {
                let u = (f64::from(x) + 0.5 - half) / half;
                out.push(self.contains(u, v));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for s in Shape::ALL {
            assert_eq!(Shape::from_class_id(s.class_id()), Some(s));
        }
        assert_eq!(Shape::from_class_id(7), None);
    }

    #[test]
    fn masks_are_non_empty_and_distinct() {
        let masks: Vec<Vec<bool>> = Shape::ALL.iter().map(|s| s.mask(16)).collect();
        for m in &masks {
            assert!(m.iter().any(|&b| b));
        }
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                assert_ne!(masks[i], masks[j]);
            }
        }
        assert!(!Shape::Ring.mask(16)[8 * 16 + 8]);
    }
}
