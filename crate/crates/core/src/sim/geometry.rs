//! Planar points and the exact smallest enclosing circle for small point sets.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn lerp(self, other: Point2, w: f64) -> Point2 {
        Point2::new(self.x + (other.x - self.x) * w, self.y + (other.y - self.y) * w)
    }

    /// Counter-clockwise rotation by `angle` radians about the origin.
    pub fn rotated(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2::new(x, y)
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        self.center.distance(p) <= self.radius + tol
    }
}

/// Minimal circle enclosing one to three points, solved exactly.
///
/// For three points the circle is the diametral circle of the longest side
/// when the opposite angle is right or obtuse (this also covers collinear
/// and repeated points), otherwise the circumcircle.
pub fn enclosing_circle(points: &[Point2]) -> Result<Circle, SimError> {
    match *points {
        [] => Err(SimError::EmptyPointSet),
        [p] => Ok(Circle { center: p, radius: 0.0 }),
        [a, b] => Ok(diametral(a, b)),
        [a, b, c] => Ok(three_point(a, b, c)),
        _ => Err(SimError::TooManyPoints(points.len())),
    }
}

fn diametral(a: Point2, b: Point2) -> Circle {
    Circle { center: a.lerp(b, 0.5), radius: 0.5 * a.distance(b) }
}

fn three_point(a: Point2, b: Point2, c: Point2) -> Circle {
    // Angle at a vertex is non-acute iff the dot product of its two edges is <= 0.
    let non_acute = |v: Point2, p: Point2, q: Point2| {
        let (e1, e2) = (p - v, q - v);
        e1.x * e2.x + e1.y * e2.y <= 0.0
    };
    if non_acute(c, a, b) {
        return diametral(a, b);
    }
    if non_acute(a, b, c) {
        return diametral(b, c);
    }
    if non_acute(b, c, a) {
        return diametral(c, a);
    }
    // All angles acute, so the points are not collinear and the determinant is nonzero.
    circumcircle(a, b, c).unwrap_or_else(|| diametral(a, b))
}

fn circumcircle(a: Point2, b: Point2, c: Point2) -> Option<Circle> {
    let (bx, by) = (b.x - a.x, b.y - a.y);
    let (cx, cy) = (c.x - a.x, c.y - a.y);
    let d = 2.0 * (bx * cy - by * cx);
    if d == 0.0 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let center = Point2::new(a.x + ux, a.y + uy);
    let radius = [a, b, c]
        .iter()
        .map(|p| center.distance(*p))
        .fold(0.0_f64, f64::max);
    Some(Circle { center, radius })
}
