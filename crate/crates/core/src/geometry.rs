//! Planar primitives shared by every module: points, axis-aligned
//! rectangles, map extents and heading-frame rotations.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2-D point or displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Vec2) -> Vec2 {
        Vec2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Sum of consecutive displacements along a polyline.
pub fn path_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[1].dist(w[0])).sum()
}

/// A rotation stored as its unit direction `(cos, sin)`.
///
/// `to_world` maps heading-frame vectors to world vectors, `to_local` is its
/// inverse. Rotations are built from a direction vector directly so no
/// trigonometric round trip is involved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub cos: f64,
    pub sin: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { cos: 1.0, sin: 0.0 };

    pub fn from_angle(theta: f64) -> Self {
        Rotation {
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Rotation taking +x onto `dir`. `dir` must be nonzero.
    pub fn from_direction(dir: Vec2) -> Self {
        let n = dir.norm();
        Rotation {
            cos: dir.x / n,
            sin: dir.y / n,
        }
    }

    pub fn to_world(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.cos * v.x - self.sin * v.y,
            self.sin * v.x + self.cos * v.y,
        )
    }

    pub fn to_local(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.cos * v.x + self.sin * v.y,
            -self.sin * v.x + self.cos * v.y,
        )
    }
}

/// Closed axis-aligned rectangle. Serialized as `{x0, y0, x1, y1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Builds a rectangle from any two opposite corners.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        dx.hypot(dy)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

/// Rectangular map bounds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Extents {
    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_rect(&self, r: &Rect) -> bool {
        r.x0 >= self.x_min && r.x1 <= self.x_max && r.y0 >= self.y_min && r.y1 <= self.y_max
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_round_trip() {
        let r = Rotation::from_direction(Vec2::new(3.0, 4.0));
        let v = Vec2::new(-1.5, 2.25);
        let back = r.to_local(r.to_world(v));
        assert!((back.x - v.x).abs() < 1e-12 && (back.y - v.y).abs() < 1e-12);
        let e = r.to_world(Vec2::new(5.0, 0.0));
        assert!((e.x - 3.0).abs() < 1e-12 && (e.y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rect_is_closed() {
        let r = Rect::new(0.0, 0.0, 2.0, 1.0);
        assert!(r.contains(Vec2::new(2.0, 1.0)));
        assert!(r.contains(Vec2::new(0.0, 0.5)));
        assert!(!r.contains(Vec2::new(2.0 + 1e-9, 0.5)));
        assert_eq!(r.distance_to(Vec2::new(5.0, 5.0)), 5.0);
    }

    #[test]
    fn path_length_sums_segments() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0), Vec2::new(3.0, 5.0)];
        assert_eq!(path_length(&pts), 6.0);
        assert_eq!(path_length(&pts[..1]), 0.0);
    }
}
