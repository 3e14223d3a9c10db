//! Axis-aligned boxes and points in continuous pixel coordinates.
//!
//! The origin is the top-left image corner. Pixel `(x, y)` covers the unit
//! square `[x, x+1) × [y, y+1)`, so the tight box of a single pixel at the
//! origin is `[0, 0, 1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `[xmin, ymin, xmax, ymax]`, serialized as a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Box2D {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = Self { xmin, ymin, xmax, ymax };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box without checking invariants. Callers guarantee ordering.
    pub(crate) const fn from_corners_unchecked(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Input(format!("box has non-finite coordinate: {self:?}")));
        }
        if self.xmin > self.xmax || self.ymin > self.ymax {
            return Err(Error::Input(format!("box corners out of order: {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> Point2D {
        box_centroid(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Box2D {
        Box2D::from_corners_unchecked(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    pub fn dilate(&self, pad: f64) -> Box2D {
        Box2D::from_corners_unchecked(self.xmin - pad, self.ymin - pad, self.xmax + pad, self.ymax + pad)
    }

    pub fn contains_box(&self, other: &Box2D) -> bool {
        other.xmin >= self.xmin && other.ymin >= self.ymin && other.xmax <= self.xmax && other.ymax <= self.ymax
    }

    /// Linear interpolation of all four corners; `t = 0` gives `self`.
    pub fn lerp(&self, other: &Box2D, t: f64) -> Box2D {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        Box2D::from_corners_unchecked(
            mix(self.xmin, other.xmin),
            mix(self.ymin, other.ymin),
            mix(self.xmax, other.xmax),
            mix(self.ymax, other.ymax),
        )
    }

    /// Smallest box containing all points. `None` for an empty iterator.
    pub fn enclosing(points: impl IntoIterator<Item = Point2D>) -> Option<Box2D> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Box2D::from_corners_unchecked(first.x, first.y, first.x, first.y);
        for p in it {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        Some(b)
    }

    pub fn corners(&self) -> [Point2D; 4] {
        [
            Point2D::new(self.xmin, self.ymin),
            Point2D::new(self.xmax, self.ymin),
            Point2D::new(self.xmax, self.ymax),
            Point2D::new(self.xmin, self.ymax),
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Box2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.to_array()
    }
}

pub fn box_iou(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn box_centroid(b: &Box2D) -> Point2D {
    Point2D::new((b.xmin + b.xmax) / 2.0, (b.ymin + b.ymax) / 2.0)
}

/// Round half away from zero, the rasterization rule used everywhere boxes
/// become integers.
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}
