//! Normalized coordinate primitives: axis-aligned boxes and quadrilaterals,
//! both expressed in [0,1] relative to the image width and height.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x_min, y_min, x_max, y_max)` with all components in
/// [0,1] and min <= max on both axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox { x_min, y_min, x_max, y_max };
        for v in b.components() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Argument(format!("bbox component {v} outside [0,1]")));
            }
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::Argument(format!(
                "bbox not canonical: ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(b)
    }

    /// Reorders arbitrary corner values into a canonical box and clamps to [0,1].
    pub fn canonical(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        BBox {
            x_min: clamp(x0.min(x1)),
            y_min: clamp(y0.min(y1)),
            x_max: clamp(x0.max(x1)),
            y_max: clamp(y0.max(y1)),
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Intersection area with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Smallest box enclosing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }
}

/// Quadrilateral `(x1,y1,...,x4,y4)`, clockwise from top-left, components
/// normalized to [0,1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub points: [f64; 8],
}

impl Quad {
    pub fn new(points: [f64; 8]) -> Result<Self> {
        for v in points {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Argument(format!("quad component {v} outside [0,1]")));
            }
        }
        Ok(Quad { points })
    }

    /// Axis-aligned quad from a canonical box.
    pub fn from_bbox(b: &BBox) -> Self {
        Quad {
            points: [
                b.x_min, b.y_min, b.x_max, b.y_min, b.x_max, b.y_max, b.x_min, b.y_max,
            ],
        }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let p = &self.points;
        [(p[0], p[1]), (p[2], p[3]), (p[4], p[5]), (p[6], p[7])]
    }

    /// Axis-aligned envelope of the four corners.
    pub fn envelope(&self) -> BBox {
        let cs = self.corners();
        let mut b = BBox {
            x_min: cs[0].0,
            y_min: cs[0].1,
            x_max: cs[0].0,
            y_max: cs[0].1,
        };
        for (x, y) in &cs[1..] {
            b.x_min = b.x_min.min(*x);
            b.y_min = b.y_min.min(*y);
            b.x_max = b.x_max.max(*x);
            b.y_max = b.y_max.max(*y);
        }
        b
    }

    /// Even-odd ray cast; boundary points count as inside within float slack.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let cs = self.corners();
        let mut inside = false;
        let mut j = 3;
        for i in 0..4 {
            let (xi, yi) = cs[i];
            let (xj, yj) = cs[j];
            if ((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
                inside = !inside;
            }
            j = i;
        }
        inside || self.on_boundary(x, y)
    }

    fn on_boundary(&self, x: f64, y: f64) -> bool {
        let cs = self.corners();
        let mut j = 3;
        for i in 0..4 {
            let (xi, yi) = cs[i];
            let (xj, yj) = cs[j];
            let (dx, dy) = (xj - xi, yj - yi);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((x - xi) * dx + (y - yi) * dy) / len2
            };
            let t = t.clamp(0.0, 1.0);
            let (px, py) = (xi + t * dx, yi + t * dy);
            if ((x - px).powi(2) + (y - py).powi(2)).sqrt() < 1e-9 {
                return true;
            }
            j = i;
        }
        false
    }

    /// Applies `x -> sx*x + ox`, `y -> sy*y + oy` to every corner.
    pub fn affine(&self, sx: f64, sy: f64, ox: f64, oy: f64) -> Quad {
        let mut points = self.points;
        for i in 0..4 {
            points[2 * i] = sx * points[2 * i] + ox;
            points[2 * i + 1] = sy * points[2 * i + 1] + oy;
        }
        Quad { points }
    }

    pub fn is_axis_aligned(&self, tol: f64) -> bool {
        let p = &self.points;
        (p[0] - p[6]).abs() <= tol
            && (p[1] - p[3]).abs() <= tol
            && (p[2] - p[4]).abs() <= tol
            && (p[5] - p[7]).abs() <= tol
    }
}
