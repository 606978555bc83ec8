//! Discrete closed contours and their RPSV representation.
//!
//! A contour is stored as `M` points sampled at uniform parameter values
//! `t_i = i / M` over a fixed period of 1. Index arithmetic wraps modulo `M`;
//! the closing point is never duplicated.
//!
//! The representation of a contour `r(t)` with exponent `m` is
//! `q(t) = |r|^m u sqrt(|r'|)`, `u = r / |r|`, which for `m = 1` is the
//! position rescaled by the square root of the speed, `q = r sqrt(|r'|)`.
//! All positions are relative to whatever basis origin the caller has chosen.

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Parameter period shared by every contour.
pub const PERIOD: f64 = 1.0;

/// Parameter value of knot `i` on an `m`-point contour.
#[inline]
pub fn knot(i: usize, m: usize) -> f64 {
    i as f64 * PERIOD / m as f64
}

#[inline]
fn is_singular_exponent(m: f64) -> bool {
    (m + 0.5).abs() < 1e-12
}

pub(crate) fn check_exponent(m: f64) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidOptions(format!("exponent {m} is not finite")));
    }
    if is_singular_exponent(m) {
        return Err(Error::SingularExponent);
    }
    Ok(())
}

/// A closed planar contour sampled uniformly in its parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Vec2>,
}

impl Contour {
    /// Smallest admissible point count; second differences need room.
    pub const MIN_POINTS: usize = 8;

    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::TooFewPoints { min: Self::MIN_POINTS, got: points.len() });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let n = points.len();
        if let Some(i) = (0..n).find(|&i| points[i] == points[(i + 1) % n]) {
            return Err(Error::StationaryPoint(i));
        }
        Ok(Self { points })
    }

    /// Builds a contour without validation. Callers guarantee the invariants.
    pub(crate) fn from_points_unchecked(points: Vec<Vec2>) -> Self {
        debug_assert!(points.len() >= Self::MIN_POINTS);
        Self { points }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec2> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniform parameter spacing.
    pub fn dt(&self) -> f64 {
        PERIOD / self.points.len() as f64
    }

    #[inline]
    pub fn point(&self, i: usize) -> Vec2 {
        self.points[i % self.points.len()]
    }

    pub fn translated(&self, offset: Vec2) -> Contour {
        Contour::from_points_unchecked(self.points.iter().map(|&p| p + offset).collect())
    }

    /// Applies an arbitrary point map and re-validates the result.
    pub fn map(&self, f: impl Fn(Vec2) -> Vec2) -> Result<Contour> {
        Contour::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Same locus, starting at a different knot.
    pub fn rotated_start(&self, shift: usize) -> Contour {
        let mut pts = self.points.clone();
        pts.rotate_left(shift % self.points.len());
        Contour::from_points_unchecked(pts)
    }

    /// Edge lengths `|r_{i+1} - r_i|`.
    pub fn chord_lengths(&self) -> Vec<f64> {
        let n = self.len();
        (0..n).map(|i| self.points[i].distance(self.points[(i + 1) % n])).collect()
    }

    /// Polygon perimeter.
    pub fn length(&self) -> f64 {
        self.chord_lengths().iter().sum()
    }

    /// Exact arc-length integral of the position over the polygon, `∮ r ds`.
    pub fn position_integral(&self) -> Vec2 {
        let n = self.len();
        let mut acc = Vec2::ZERO;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            acc += (a + b) * (0.5 * a.distance(b));
        }
        acc
    }

    /// Arc-length centroid of the polygon.
    pub fn centroid(&self) -> Vec2 {
        self.position_integral() / self.length()
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Resamples a closed polygon to `m` points equally spaced in arc length.
///
/// The first output point is the first input vertex and the traversal
/// direction is preserved. Repeated consecutive vertices (including an
/// explicit closing vertex) are dropped first.
pub fn resample_uniform_arclength(raw: &[Vec2], m: usize) -> Result<Contour> {
    if m < Contour::MIN_POINTS {
        return Err(Error::TooFewPoints { min: Contour::MIN_POINTS, got: m });
    }
    if let Some(i) = raw.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut verts: Vec<Vec2> = Vec::with_capacity(raw.len());
    for &p in raw {
        if verts.last() != Some(&p) {
            verts.push(p);
        }
    }
    while verts.len() > 1 && verts.first() == verts.last() {
        verts.pop();
    }
    if verts.len() < 3 {
        return Err(Error::DegenerateContour("fewer than 3 distinct vertices"));
    }

    let n = verts.len();
    let edges: Vec<f64> = (0..n).map(|i| verts[i].distance(verts[(i + 1) % n])).collect();
    let total: f64 = edges.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateContour("zero length"));
    }
    let extent = verts.iter().map(|p| (*p - verts[0]).norm()).fold(0.0, f64::max);
    let twice_area = (0..n).map(|i| (verts[i] - verts[0]).cross(verts[(i + 1) % n] - verts[0]));
    let max_cross = twice_area.map(f64::abs).fold(0.0, f64::max);
    let spread = (1..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (verts[i] - verts[0]).cross(verts[j] - verts[0]).abs())
        .fold(max_cross, f64::max);
    if spread <= 1e-14 * extent * extent {
        return Err(Error::DegenerateContour("all vertices collinear"));
    }

    let spacing = total / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut edge = 0usize;
    let mut edge_start = 0.0f64;
    for k in 0..m {
        let s = k as f64 * spacing;
        while edge + 1 < n && edge_start + edges[edge] <= s {
            edge_start += edges[edge];
            edge += 1;
        }
        let a = verts[edge];
        let b = verts[(edge + 1) % n];
        let w = if edges[edge] > 0.0 { ((s - edge_start) / edges[edge]).clamp(0.0, 1.0) } else { 0.0 };
        out.push(if w == 0.0 { a } else { a.lerp(b, w) });
    }
    Contour::new(out)
}

/// Central-difference derivatives of a contour.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    /// First derivative `r'_i`.
    pub velocity: Vec<Vec2>,
    /// Speed `|r'_i|`, strictly positive.
    pub speed: Vec<f64>,
    /// Unit tangent `e_i`.
    pub tangent: Vec<Vec2>,
    /// Second derivative `r''_i`.
    pub acceleration: Vec<Vec2>,
}

impl VelocityField {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }
}

/// Periodic central differences of first and second order.
pub fn differentiate(c: &Contour) -> Result<VelocityField> {
    differentiate_points(c.points())
}

pub(crate) fn differentiate_points(p: &[Vec2]) -> Result<VelocityField> {
    let n = p.len();
    let dt = PERIOD / n as f64;
    let mut velocity = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut tangent = Vec::with_capacity(n);
    let mut acceleration = Vec::with_capacity(n);
    for i in 0..n {
        let prev = p[(i + n - 1) % n];
        let next = p[(i + 1) % n];
        let v = (next - prev) / (2.0 * dt);
        let s = v.norm();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::StationaryPoint(i));
        }
        velocity.push(v);
        speed.push(s);
        tangent.push(v / s);
        acceleration.push((next - p[i] * 2.0 + prev) / (dt * dt));
    }
    Ok(VelocityField { velocity, speed, tangent, acceleration })
}

/// Per-point representation vectors of a contour.
#[derive(Debug, Clone, PartialEq)]
pub struct RpsvCurve {
    q: Vec<Vec2>,
    exponent: f64,
}

impl RpsvCurve {
    /// Wraps raw representation vectors.
    pub fn new(q: Vec<Vec2>, exponent: f64) -> Result<Self> {
        check_exponent(exponent)?;
        if q.len() < Contour::MIN_POINTS {
            return Err(Error::TooFewPoints { min: Contour::MIN_POINTS, got: q.len() });
        }
        if let Some(i) = q.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { q, exponent })
    }

    /// Representation of a contour whose derivatives are already known.
    pub fn from_parts(c: &Contour, v: &VelocityField, m: f64) -> Result<Self> {
        check_exponent(m)?;
        if c.len() != v.len() {
            return Err(Error::LengthMismatch(c.len(), v.len()));
        }
        let q = c
            .points()
            .iter()
            .zip(&v.speed)
            .enumerate()
            .map(|(i, (&r, &s))| {
                if m == 1.0 {
                    return Ok(r * s.sqrt());
                }
                let rho = r.norm();
                if rho == 0.0 {
                    return if m > 0.0 { Ok(Vec2::ZERO) } else { Err(Error::OriginOnContour(i)) };
                }
                Ok(r * (rho.powf(m - 1.0) * s.sqrt()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { q, exponent: m })
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.q
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn dt(&self) -> f64 {
        PERIOD / self.q.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.q.iter().map(|v| v.norm_sq()).sum::<f64>() * self.dt()
    }

    pub fn max_norm(&self) -> f64 {
        self.q.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn check_compatible(&self, other: &RpsvCurve) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        if self.exponent != other.exponent {
            return Err(Error::ExponentMismatch(self.exponent, other.exponent));
        }
        Ok(())
    }

    /// Pointwise linear combination `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &RpsvCurve, b: f64) -> Result<RpsvCurve> {
        self.check_compatible(other)?;
        let q = self.q.iter().zip(&other.q).map(|(&x, &y)| x * a + y * b).collect();
        Ok(RpsvCurve { q, exponent: self.exponent })
    }
}

/// `q_i = |r_i|^m u_i sqrt(|r'_i|)`.
pub fn to_rpsv(c: &Contour, m: f64) -> Result<RpsvCurve> {
    check_exponent(m)?;
    let v = differentiate(c)?;
    RpsvCurve::from_parts(c, &v, m)
}

/// Riemann sum of `q1 · q2` over the closed parameter range.
pub fn inner_product(q1: &RpsvCurve, q2: &RpsvCurve) -> Result<f64> {
    q1.check_compatible(q2)?;
    Ok(q1.q.iter().zip(&q2.q).map(|(a, b)| a.dot(*b)).sum::<f64>() * q1.dt())
}

/// Squared L2 distance between two representations.
pub fn distance_sq(q1: &RpsvCurve, q2: &RpsvCurve) -> Result<f64> {
    q1.check_compatible(q2)?;
    Ok(q1.q.iter().zip(&q2.q).map(|(a, b)| (*a - *b).norm_sq()).sum::<f64>() * q1.dt())
}

/// `∮ |r - center|^2 ds` with the arc-length element at each knot taken as
/// half the chord spanning its two neighbours, `|r_{i+1} - r_{i-1}| / 2`.
///
/// That element equals `|r'_i| dt` under central differences, so for `m = 1`
/// and `center` at the basis origin this matches `‖q‖²` to rounding.
pub fn sum_second_central_moments(c: &Contour, center: Vec2) -> f64 {
    let p = c.points();
    let n = p.len();
    (0..n)
        .map(|i| {
            let ds = 0.5 * p[(i + 1) % n].distance(p[(i + n - 1) % n]);
            (p[i] - center).norm_sq() * ds
        })
        .sum()
}

/// `Γ_i = (r'_i · r''_i) / |r'_i|²`, the logarithmic rate of change of speed.
pub fn christoffel_divergence(v: &VelocityField) -> Vec<f64> {
    v.velocity
        .iter()
        .zip(&v.acceleration)
        .zip(&v.speed)
        .map(|((a, b), s)| a.dot(*b) / (s * s))
        .collect()
}

/// Arc-length weighted centroid of a set of contours, `Σ∮R ds / ΣL`.
///
/// Each contour is integrated exactly along its polygon edges, so the result
/// depends only on the polygon loci, not on where the knots sit on them.
pub fn homogeneous_centroid(contours: &[Contour]) -> Result<Vec2> {
    if contours.is_empty() {
        return Err(Error::TooFewContours { need: 1, got: 0 });
    }
    let mut moment = Vec2::ZERO;
    let mut length = 0.0;
    for c in contours {
        moment += c.position_integral();
        length += c.length();
    }
    if !(length > 0.0) {
        return Err(Error::DegenerateContour("total length zero"));
    }
    Ok(moment / length)
}

/// `n` contours sharing a point count, expressed relative to a basis origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSystem {
    contours: Vec<Contour>,
    origin: Vec2,
}

impl ContourSystem {
    /// A system in the input frame (origin at zero).
    pub fn new(contours: Vec<Contour>) -> Result<Self> {
        Self::with_origin(contours, Vec2::ZERO)
    }

    /// A system whose contours are already relative to `origin`.
    pub fn with_origin(contours: Vec<Contour>, origin: Vec2) -> Result<Self> {
        let first = contours.first().ok_or(Error::TooFewContours { need: 1, got: 0 })?;
        let m = first.len();
        if let Some(c) = contours.iter().find(|c| c.len() != m) {
            return Err(Error::LengthMismatch(m, c.len()));
        }
        Ok(Self { contours, origin })
    }

    /// Moves the basis origin to the system's homogeneous centroid.
    pub fn centered(self) -> Result<Self> {
        let c = homogeneous_centroid(&self.contours)?;
        Ok(self.shift_origin(c))
    }

    /// Displaces the basis by `delta`: every position becomes `r - delta`.
    pub fn shift_origin(self, delta: Vec2) -> Self {
        let contours = self.contours.iter().map(|c| c.translated(-delta)).collect();
        Self { contours, origin: self.origin + delta }
    }

    pub fn contours(&self) -> &[Contour] {
        &self.contours
    }

    pub fn into_contours(self) -> Vec<Contour> {
        self.contours
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.contours[0].len()
    }

    /// Cumulative displacement of the basis from the input frame.
    pub fn origin_offset(&self) -> Vec2 {
        self.origin
    }

    /// Expresses a contour given in this system's basis in the input frame.
    pub fn to_input_frame(&self, c: &Contour) -> Contour {
        c.translated(self.origin)
    }

    pub fn homogeneous_centroid(&self) -> Result<Vec2> {
        homogeneous_centroid(&self.contours)
    }
}
