use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// A planar point or vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_polar(radius: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(radius * c, radius * s)
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation by a right angle (k × v).
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn lerp(self, other: Vec2, w: f64) -> Vec2 {
        self + (other - self) * w
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for Vec2 {
    fn from((x, y): (f64, f64)) -> Self {
        Vec2::new(x, y)
    }
}

/// A similarity transform `p -> scale * R(angle) * p + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub angle: f64,
    pub scale: f64,
    pub offset: Vec2,
}

impl Similarity {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotated(self.angle) * self.scale + self.offset
    }
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Vec2], b: &[Vec2]) -> f64 {
    fn directed(a: &[Vec2], b: &[Vec2]) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
    directed(a, b).max(directed(b, a))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let w = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * w)
}

/// Distance from `p` to a closed polyline.
pub fn point_polyline_distance(p: Vec2, loop_points: &[Vec2]) -> f64 {
    let n = loop_points.len();
    (0..n)
        .map(|i| point_segment_distance(p, loop_points[i], loop_points[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Signed shoelace area of a closed polygon (positive for counter-clockwise).
pub fn signed_area(loop_points: &[Vec2]) -> f64 {
    let n = loop_points.len();
    0.5 * (0..n)
        .map(|i| loop_points[i].cross(loop_points[(i + 1) % n]))
        .sum::<f64>()
}

/// Winding number of a closed polygon around `p` (zero outside).
pub fn winding_number(p: Vec2, loop_points: &[Vec2]) -> i32 {
    let n = loop_points.len();
    let mut w = 0;
    for i in 0..n {
        let a = loop_points[i] - p;
        let b = loop_points[(i + 1) % n] - p;
        if a.y <= 0.0 {
            if b.y > 0.0 && a.cross(b) > 0.0 {
                w += 1;
            }
        } else if b.y <= 0.0 && a.cross(b) < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Largest pairwise distance between polygon vertices.
pub fn diameter(points: &[Vec2]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(p.distance(*q));
        }
    }
    best
}
