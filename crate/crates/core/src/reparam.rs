//! Optimal reparameterization of one contour against another.
//!
//! The pair energy `E = Σ |q1_i - qk_i|² Δt` is minimised over monotone
//! circular maps `γ` of the parameter interval. Each iteration evaluates the
//! Euler–Lagrange residual at the current point positions, converts it into
//! a small diffeomorphism `δγ`, and moves the points of `k` along a dense
//! lookup table of its original geometry to their new parameter values.

use log::{debug, trace, warn};
use rayon::prelude::*;

use crate::contour::{
    check_exponent, christoffel_divergence, differentiate, differentiate_points, distance_sq, to_rpsv,
    Contour, ContourSystem, RpsvCurve, VelocityField, PERIOD,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::reconstruct::{solve_cyclic_band, CyclicBandSystem};

/// A monotone circular map of the parameter interval, sampled at the knots.
///
/// Values are stored lifted to the real line: `γ(t_i)` for `i = 0..M` is a
/// strictly increasing sequence with `γ(t_{i+M}) = γ(t_i) + T` implied, and
/// the first value lies in `[0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffeomorphism {
    lifted: Vec<f64>,
}

impl Diffeomorphism {
    pub fn identity(m: usize) -> Self {
        Self { lifted: (0..m).map(|i| i as f64 * PERIOD / m as f64).collect() }
    }

    /// `γ(t) = t + shift`.
    pub fn shift(m: usize, shift: f64) -> Self {
        Self::from_lifted((0..m).map(|i| i as f64 * PERIOD / m as f64 + shift).collect())
            .expect("a shifted identity is monotone")
    }

    /// Builds a map from lifted knot values, normalising the first into `[0, T)`.
    pub fn from_lifted(mut lifted: Vec<f64>) -> Result<Self> {
        let n = lifted.len();
        if n < 2 {
            return Err(Error::TooFewPoints { min: 2, got: n });
        }
        if lifted.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOptions("non-finite diffeomorphism value".into()));
        }
        let wraps = (lifted[0] / PERIOD).floor() * PERIOD;
        if wraps != 0.0 {
            for v in &mut lifted {
                *v -= wraps;
            }
        }
        let d = Self { lifted };
        if !d.is_valid() {
            return Err(Error::InvalidOptions("diffeomorphism is not strictly increasing".into()));
        }
        Ok(d)
    }

    /// Builds a map from circular target values in `[0, T)`.
    pub fn from_targets(targets: &[f64]) -> Result<Self> {
        let mut lifted = Vec::with_capacity(targets.len());
        let mut wraps = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if i > 0 && t + wraps <= lifted[i - 1] {
                wraps += PERIOD;
            }
            lifted.push(t + wraps);
        }
        Self::from_lifted(lifted)
    }

    pub fn len(&self) -> usize {
        self.lifted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lifted.is_empty()
    }

    pub fn lifted(&self) -> &[f64] {
        &self.lifted
    }

    /// Knot values wrapped into `[0, T)`.
    pub fn targets(&self) -> Vec<f64> {
        self.lifted.iter().map(|v| v.rem_euclid(PERIOD)).collect()
    }

    /// Wrapped increments `γ(t_{i+1}) - γ(t_i)`, including the closing one.
    pub fn increments(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| if i + 1 < n { self.lifted[i + 1] - self.lifted[i] } else { self.lifted[0] + PERIOD - self.lifted[i] })
            .collect()
    }

    /// All wrapped increments are strictly positive.
    pub fn is_valid(&self) -> bool {
        self.increments().iter().all(|d| *d > 0.0)
    }

    /// Knot value `γ(t_j)` for any integer `j`, continued periodically.
    fn lifted_at(&self, j: isize) -> f64 {
        let n = self.len() as isize;
        let cycles = j.div_euclid(n);
        self.lifted[j.rem_euclid(n) as usize] + cycles as f64 * PERIOD
    }

    /// Hermite tangent at knot `j`, per knot spacing: the central difference,
    /// limited to three times the smaller adjacent increment so that every
    /// interval stays monotone.
    fn tangent(&self, j: isize) -> f64 {
        let left = self.lifted_at(j) - self.lifted_at(j - 1);
        let right = self.lifted_at(j + 1) - self.lifted_at(j);
        (0.5 * (left + right)).min(3.0 * left.min(right))
    }

    /// `γ(t)` for any real `t`, by circular cubic Hermite interpolation.
    ///
    /// Where neighbouring increments are within a factor of five of each other
    /// this is the Catmull–Rom spline through the knots.
    pub fn evaluate(&self, t: f64) -> f64 {
        let n = self.len();
        let x = t * n as f64 / PERIOD;
        let j = x.floor();
        let s = x - j;
        let j = j as isize;
        if s == 0.0 {
            return self.lifted_at(j);
        }
        let (p1, p2) = (self.lifted_at(j), self.lifted_at(j + 1));
        let (m1, m2) = (self.tangent(j), self.tangent(j + 1));
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p1 + (s3 - 2.0 * s2 + s) * m1 + (3.0 * s2 - 2.0 * s3) * p2 + (s3 - s2) * m2
    }

    /// `dγ/dt` at knot `i` as used by [`Diffeomorphism::evaluate`].
    pub fn knot_slope(&self, i: usize) -> f64 {
        self.tangent(i as isize) * self.len() as f64 / PERIOD
    }

    /// Largest wrapped distance `|γ(t_i) - t_i|`.
    pub fn max_displacement(&self) -> f64 {
        let n = self.len();
        self.lifted
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = (v - i as f64 * PERIOD / n as f64).rem_euclid(PERIOD);
                d.min(PERIOD - d)
            })
            .fold(0.0, f64::max)
    }

    /// Numerical inverse at the knots.
    pub fn inverse(&self) -> Diffeomorphism {
        let n = self.len();
        let dt = PERIOD / n as f64;
        // Extended knot table covering one period past the start.
        let xs: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
        let ys: Vec<f64> = (0..=n).map(|j| if j < n { self.lifted[j] } else { self.lifted[0] + PERIOD }).collect();
        let y0 = ys[0];
        let lifted = (0..n)
            .map(|i| {
                // Find s with γ(s) = t where t is the first lift of t_i above y0.
                let mut t = i as f64 * dt;
                while t < y0 {
                    t += PERIOD;
                }
                while t >= y0 + PERIOD {
                    t -= PERIOD;
                }
                let j = ys.partition_point(|y| *y <= t).clamp(1, n) - 1;
                let w = (t - ys[j]) / (ys[j + 1] - ys[j]);
                xs[j] + w * dt
            })
            .collect::<Vec<f64>>();
        // The values above are increasing except for one wrap; lift them.
        Diffeomorphism::from_targets(&lifted.iter().map(|v| v.rem_euclid(PERIOD)).collect::<Vec<_>>())
            .expect("inverse of a monotone map is monotone")
    }
}

/// `(outer ∘ inner)(t_i) = outer(inner(t_i))`.
pub fn compose(outer: &Diffeomorphism, inner: &Diffeomorphism) -> Result<Diffeomorphism> {
    if outer.len() != inner.len() {
        return Err(Error::LengthMismatch(outer.len(), inner.len()));
    }
    Diffeomorphism::from_lifted(inner.lifted.iter().map(|&t| outer.evaluate(t)).collect())
}

/// Dense table of positions along a fixed closed contour.
///
/// Entry `j` holds the position at parameter `j / (K M)`. Entries at the
/// original knots (`j` a multiple of `K`) are the knots themselves; the
/// others follow a periodic Catmull–Rom spline through the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourLut {
    table: Vec<Vec2>,
    oversample: usize,
}

impl ContourLut {
    pub const MIN_OVERSAMPLE: usize = 8;

    pub fn new(c: &Contour, oversample: usize) -> Result<Self> {
        if oversample < Self::MIN_OVERSAMPLE {
            return Err(Error::InvalidOptions(format!(
                "lookup-table oversampling must be at least {}",
                Self::MIN_OVERSAMPLE
            )));
        }
        let p = c.points();
        let n = p.len();
        let mut table = Vec::with_capacity(n * oversample);
        for i in 0..n {
            let p0 = p[(i + n - 1) % n];
            let p1 = p[i];
            let p2 = p[(i + 1) % n];
            let p3 = p[(i + 2) % n];
            table.push(p1);
            for k in 1..oversample {
                table.push(catmull_rom(p0, p1, p2, p3, k as f64 / oversample as f64));
            }
        }
        Ok(Self { table, oversample })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn points(&self) -> &[Vec2] {
        &self.table
    }

    /// Position at parameter `t` (any real value, taken modulo `T`).
    pub fn evaluate(&self, t: f64) -> Vec2 {
        let n = self.table.len();
        let x = t.rem_euclid(PERIOD) * n as f64 / PERIOD;
        let nearest = x.round();
        if (x - nearest).abs() < 1e-9 {
            return self.table[(nearest as usize) % n];
        }
        // Catmull–Rom between table entries keeps the lookup C¹, so the
        // pair energy has no kinks at table spacing.
        let j = (x.floor() as usize) % n;
        let s = x - x.floor();
        catmull_rom(
            self.table[(j + n - 1) % n],
            self.table[j],
            self.table[(j + 1) % n],
            self.table[(j + 2) % n],
            s,
        )
    }
}

/// Derivative of [`catmull_rom`] with respect to `s`.
fn catmull_rom_derivative(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, s: f64) -> Vec2 {
    ((p2 - p0) + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (2.0 * s) + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * (3.0 * s * s))
        * 0.5
}

/// Uniform Catmull–Rom segment from `p1` (s = 0) to `p2` (s = 1).
fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, s: f64) -> Vec2 {
    let s2 = s * s;
    let s3 = s2 * s;
    (p1 * 2.0 + (p2 - p0) * s + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * s2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * s3)
        * 0.5
}

impl ContourLut {
    /// Derivative of [`ContourLut::evaluate`] with respect to `t`.
    pub fn derivative(&self, t: f64) -> Vec2 {
        let n = self.table.len();
        let x = t.rem_euclid(PERIOD) * n as f64 / PERIOD;
        let nearest = x.round();
        let (j, s) = if (x - nearest).abs() < 1e-9 { ((nearest as usize) % n, 0.0) } else { ((x.floor() as usize) % n, x - x.floor()) };
        let d = catmull_rom_derivative(
            self.table[(j + n - 1) % n],
            self.table[j],
            self.table[(j + 1) % n],
            self.table[(j + 2) % n],
            s,
        );
        d * (n as f64 / PERIOD)
    }
}

/// Moves point `i` to the table position at `γ(t_i)`.
pub fn redistribute(lut: &ContourLut, dg: &Diffeomorphism) -> Result<Contour> {
    Contour::new(dg.lifted().iter().map(|&t| lut.evaluate(t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReparamOptions {
    /// Dimensionless step `τ`; the applied step is `τ Δt² / (‖r1‖∞ ‖rk‖∞)`.
    pub step_size: f64,
    pub max_iters: usize,
    /// Converged once the largest move of an iteration is below
    /// `residual_tol · Δt`.
    pub residual_tol: f64,
    pub lut_oversample: usize,
    /// Largest per-iteration move of any point, as a fraction of `Δt`.
    pub step_clamp: f64,
    /// Smoothing length (in units of the period) of the Sobolev
    /// preconditioner applied to the residual; zero gives plain descent.
    pub smoothing: f64,
    /// Representation exponent `m`.
    pub exponent: f64,
}

impl Default for ReparamOptions {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_iters: 5000,
            residual_tol: 1e-6,
            lut_oversample: 16,
            step_clamp: 0.2,
            smoothing: DEFAULT_SMOOTHING,
            exponent: 1.0,
        }
    }
}

/// Default preconditioner length, a twentieth of the period.
pub const DEFAULT_SMOOTHING: f64 = 0.05;

impl ReparamOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidOptions(msg.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if self.lut_oversample < ContourLut::MIN_OVERSAMPLE {
            return bad("lut_oversample must be at least 8");
        }
        if !(self.step_clamp > 0.0 && self.step_clamp < 0.5) {
            return bad("step_clamp must lie in (0, 0.5)");
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return bad("smoothing must be non-negative");
        }
        check_exponent(self.exponent)
    }
}

/// Euler–Lagrange residual for `m = 1`:
/// `ṙ1·rk − r1·ṙk + ½ (r1·rk)(Γ1 − Γk)`.
///
/// The first variation of the pair energy with respect to `γ` at `t_i` is
/// `sqrt(|ṙ1_i| |ṙk_i|)` times this value, so descent moves against it.
pub fn el_residual(r1: &Contour, v1: &VelocityField, rk: &Contour, vk: &VelocityField) -> Result<Vec<f64>> {
    if r1.len() != rk.len() {
        return Err(Error::LengthMismatch(r1.len(), rk.len()));
    }
    let g1 = christoffel_divergence(v1);
    let gk = christoffel_divergence(vk);
    Ok((0..r1.len())
        .map(|i| {
            let a = r1.points()[i];
            let b = rk.points()[i];
            v1.velocity[i].dot(b) - a.dot(vk.velocity[i]) + 0.5 * a.dot(b) * (g1[i] - gk[i])
        })
        .collect())
}

/// Euler–Lagrange residual for general `m`, with the projector
/// `P = m uu + u⊥u⊥` of each contour applied to its velocity:
/// `ṙ1·P1·rk − r1·Pk·ṙk + ½ (r1·rk)(Γ1 − Γk)`.
pub fn el_residual_generalized(
    r1: &Contour,
    v1: &VelocityField,
    rk: &Contour,
    vk: &VelocityField,
    m: f64,
) -> Result<Vec<f64>> {
    check_exponent(m)?;
    if m == 1.0 {
        return el_residual(r1, v1, rk, vk);
    }
    if r1.len() != rk.len() {
        return Err(Error::LengthMismatch(r1.len(), rk.len()));
    }
    let g1 = christoffel_divergence(v1);
    let gk = christoffel_divergence(vk);
    let project = |r: Vec2, v: Vec2, i: usize| -> Result<Vec2> {
        let n = r.norm();
        if n == 0.0 {
            return Err(Error::OriginOnContour(i));
        }
        let u = r / n;
        let w = u.perp();
        Ok(u * (m * v.dot(u)) + w * v.dot(w))
    };
    (0..r1.len())
        .map(|i| {
            let a = r1.points()[i];
            let b = rk.points()[i];
            let p1 = project(a, v1.velocity[i], i)?;
            let pk = project(b, vk.velocity[i], i)?;
            Ok(p1.dot(b) - a.dot(pk) + 0.5 * a.dot(b) * (g1[i] - gk[i]))
        })
        .collect()
}

/// Stationarity residual written on the representations themselves,
/// `q̇1·qk − q1·q̇k`, with periodic central differences of `q`.
///
/// Equal to the variation weight times the contour form of the residual in
/// the continuum, and linear in each argument, for every exponent.
pub fn rpsv_residual(q1: &RpsvCurve, qk: &RpsvCurve) -> Result<Vec<f64>> {
    let n = q1.len();
    if qk.len() != n {
        return Err(Error::LengthMismatch(n, qk.len()));
    }
    let (a, b) = (q1.vectors(), qk.vectors());
    let inv = 1.0 / (2.0 * q1.dt());
    Ok((0..n)
        .map(|i| {
            let (next, prev) = ((i + 1) % n, (i + n - 1) % n);
            let da = (a[next] - a[prev]) * inv;
            let db = (b[next] - b[prev]) * inv;
            da.dot(b[i]) - a[i].dot(db)
        })
        .collect())
}

/// [`rpsv_residual`] scaled like [`normalized_residual`]:
/// `max|W| Δt / (‖q1‖ ‖qk‖)`.
pub fn normalized_rpsv_residual(q1: &RpsvCurve, qk: &RpsvCurve) -> Result<f64> {
    let w = rpsv_residual(q1, qk)?;
    let scale = (q1.norm_sq() * qk.norm_sq()).sqrt();
    Ok(w.iter().fold(0.0f64, |a, r| a.max(r.abs())) * q1.dt() / scale)
}

/// Turns a (preconditioned) residual into a near-identity diffeomorphism.
///
/// Knot `i` moves by `-step · residual_i`, clamped to `±step_clamp · Δt`.
/// Neighbouring moves then differ by at most `2 · step_clamp · Δt`, so every
/// increment stays inside `Δt (1 ± 2 step_clamp)` and the map is monotone,
/// and the increments telescope to exactly one period.
pub fn gradient_step(residual: &[f64], step: f64, opts: &ReparamOptions) -> Diffeomorphism {
    let n = residual.len();
    let dt = PERIOD / n as f64;
    let limit = opts.step_clamp * dt;
    let lifted = residual
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = i as f64 * dt;
            let d = (-step * r).clamp(-limit, limit);
            if d == 0.0 {
                t
            } else {
                t + d
            }
        })
        .collect();
    Diffeomorphism::from_lifted(lifted).expect("clamped steps keep the map monotone")
}

/// Applies `(I − λ² D²)⁻¹` with `D²` the periodic second difference.
fn smooth(residual: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Ok(residual.to_vec());
    }
    let n = residual.len();
    let dt = PERIOD / n as f64;
    let c = (lambda / dt).powi(2);
    let sys = CyclicBandSystem {
        diag: vec![1.0 + 2.0 * c; n],
        sub: vec![-c; n],
        sup: vec![-c; n],
        rhs: residual.to_vec(),
    };
    solve_cyclic_band(&sys)
}

/// Variation weight `sqrt(|ṙ1| |ṙk|) (|r1| |rk|)^{m-1}`: the first variation
/// of the pair energy is this weight times the residual.
pub fn variation_weight(r1: &Contour, v1: &VelocityField, rk: &Contour, vk: &VelocityField, m: f64) -> Vec<f64> {
    (0..r1.len())
        .map(|i| {
            let w = (v1.speed[i] * vk.speed[i]).sqrt();
            if m == 1.0 {
                w
            } else {
                w * (r1.points()[i].norm() * rk.points()[i].norm()).powf(m - 1.0)
            }
        })
        .collect()
}

/// Energy gradient rescaled to the units of the residual: divided by `Δt`
/// and by the mean variation weight.
fn scaled_gradient(grad: &[f64], r1: &Contour, v1: &VelocityField, rk: &Contour, vk: &VelocityField, m: f64) -> Vec<f64> {
    let w = variation_weight(r1, v1, rk, vk, m);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let dt = PERIOD / grad.len() as f64;
    grad.iter().map(|g| g / (dt * mean)).collect()
}

/// Exact gradient of [`pair_energy`] with respect to the parameter values
/// `γ_j` at which the points `pts` were looked up; `tangents[j]` is
/// `dp_j/dγ_j`.
///
/// Each point enters its own representation vector through `|p|^{m-1} p`
/// and its neighbours' through their central-difference speeds.
pub fn energy_gradient(q1: &RpsvCurve, pts: &Contour, tangents: &[Vec2]) -> Result<Vec<f64>> {
    let n = pts.len();
    if q1.len() != n {
        return Err(Error::LengthMismatch(q1.len(), n));
    }
    if tangents.len() != n {
        return Err(Error::LengthMismatch(n, tangents.len()));
    }
    let m = q1.exponent();
    let dt = PERIOD / n as f64;
    let p = pts.points();
    // f_i = |p_i|^{m-1} p_i, chord units e_i and root speeds.
    let mut f = Vec::with_capacity(n);
    let mut chord = Vec::with_capacity(n);
    let mut root = Vec::with_capacity(n);
    for i in 0..n {
        let c = p[(i + 1) % n] - p[(i + n - 1) % n];
        let len = c.norm();
        if !(len > 0.0) {
            return Err(Error::StationaryPoint(i));
        }
        chord.push(c * (1.0 / len));
        root.push((len / (2.0 * dt)).sqrt());
        let rho = p[i].norm();
        f.push(if m == 1.0 {
            p[i]
        } else if rho == 0.0 {
            if m > 1.0 {
                Vec2::ZERO
            } else {
                return Err(Error::OriginOnContour(i));
            }
        } else {
            p[i] * rho.powf(m - 1.0)
        });
    }
    let diff: Vec<Vec2> = (0..n).map(|i| q1.vectors()[i] - f[i] * root[i]).collect();
    let mut grad = Vec::with_capacity(n);
    for j in 0..n {
        // Own term: Jacobian of f is |p|^{m-1} (m uu + u⊥u⊥), symmetric.
        let own = if m == 1.0 {
            diff[j] * root[j]
        } else {
            let rho = p[j].norm();
            let u = p[j] * (1.0 / rho);
            let w = u.perp();
            (u * (m * u.dot(diff[j])) + w * w.dot(diff[j])) * (rho.powf(m - 1.0) * root[j])
        };
        let next = (j + 1) % n;
        let prev = (j + n - 1) % n;
        let from_next = chord[next] * (-f[next].dot(diff[next]) / (4.0 * dt * root[next]));
        let from_prev = chord[prev] * (f[prev].dot(diff[prev]) / (4.0 * dt * root[prev]));
        let de_dp = (own + from_next + from_prev) * (-2.0 * dt);
        grad.push(de_dp.dot(tangents[j]));
    }
    Ok(grad)
}

/// `Σ |q1_i − qk_i|² Δt` for the representation of `k` with exponent `m`.
pub fn pair_energy(q1: &RpsvCurve, k: &Contour) -> Result<f64> {
    distance_sq(q1, &to_rpsv(k, q1.exponent())?)
}

/// Max-norm residual scaled to be dimensionless and resolution-independent:
/// `max|res| Δt / (‖r1‖∞ ‖rk‖∞)`.
pub fn normalized_residual(residual: &[f64], r1: &Contour, rk: &Contour) -> f64 {
    let scale = r1.max_radius() * rk.max_radius();
    let dt = PERIOD / residual.len() as f64;
    residual.iter().fold(0.0f64, |a, r| a.max(r.abs())) * dt / scale
}

/// Best cyclic index shift of `k` against `q1` by brute force.
fn best_cyclic_shift(q1: &RpsvCurve, qk: &RpsvCurve) -> usize {
    let a = q1.vectors();
    let b = qk.vectors();
    let n = a.len();
    (0..n)
        .map(|s| {
            let e: f64 = (0..n).map(|i| (a[i] - b[(i + s) % n]).norm_sq()).sum();
            (s, e)
        })
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Outcome of a pairwise optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    /// `k` with its points moved to the optimal parameter values.
    pub contour: Contour,
    /// Cumulative map from the uniform parameter to the parameter of the
    /// original `k`.
    pub diffeo: Diffeomorphism,
    /// Pair energy before the first and after every accepted iteration.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Normalized stationarity residual at the final positions.
    pub residual: f64,
    /// The same normalization applied to the gradient of the discrete
    /// energy, which is what the descent drives to zero.
    pub gradient_residual: f64,
}

impl PairwiseResult {
    pub fn energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace is never empty")
    }
}

const MAX_HALVINGS: usize = 20;
/// Increments below this fraction of `Δt` count as collapsed.
const COLLAPSED: f64 = 1e-6;
/// Fraction of the first-order predicted decrease a step must achieve.
const ARMIJO: f64 = 1e-4;

/// Algorithm: optimal reparameterization of `k` against `r1`.
///
/// A brute-force cyclic shift of the start point is tried first; the
/// descent then starts from the best shift.
pub fn optimize_pairwise(r1: &Contour, k: &Contour, opts: &ReparamOptions) -> Result<PairwiseResult> {
    opts.validate()?;
    if r1.len() != k.len() {
        return Err(Error::LengthMismatch(r1.len(), k.len()));
    }
    let q1 = to_rpsv(r1, opts.exponent)?;
    let qk = to_rpsv(k, opts.exponent)?;
    let shift = best_cyclic_shift(&q1, &qk);
    let start = Diffeomorphism::shift(k.len(), shift as f64 * k.dt());
    optimize_pairwise_from(r1, k, start, opts)
}

/// Pairwise optimization warm-started from `start`, a map into the
/// parameter of `k`.
pub fn optimize_pairwise_from(
    r1: &Contour,
    k: &Contour,
    start: Diffeomorphism,
    opts: &ReparamOptions,
) -> Result<PairwiseResult> {
    opts.validate()?;
    let n = r1.len();
    if k.len() != n {
        return Err(Error::LengthMismatch(n, k.len()));
    }
    if start.len() != n {
        return Err(Error::LengthMismatch(n, start.len()));
    }
    let m = opts.exponent;
    let dt = PERIOD / n as f64;
    let lut = ContourLut::new(k, opts.lut_oversample)?;
    let v1 = differentiate(r1)?;
    let q1 = RpsvCurve::from_parts(r1, &v1, m)?;

    let mut gamma = start;
    let mut pts = redistribute(&lut, &gamma)?;
    let mut energy = pair_energy(&q1, &pts)?;
    let mut trace = vec![energy];
    let base_step = opts.step_size * dt * dt / (r1.max_radius() * k.max_radius());
    let lambda = opts.smoothing;
    // Preconditioning shrinks the highest frequencies by this factor; the
    // step grows to match so that their stability limit is unchanged.
    let gain = 1.0 + 4.0 * (lambda / dt).powi(2);
    let step0 = base_step * gain;
    let limit = opts.step_clamp * dt;

    // Backtracking with a sufficient-decrease test: `slope` is the energy
    // gradient with respect to the per-point moves, in units of
    // `Δt · mean weight`, so a move `d` is predicted to change the energy by
    // `Σ slope_i d_i Δt w̄`.
    let search = |gamma: &Diffeomorphism, dir: &[f64], slope: &[f64], wbar: f64, energy: f64| -> Result<Option<(Diffeomorphism, Contour, f64)>> {
        let mut step = step0;
        for _ in 0..=MAX_HALVINGS {
            let dg = gradient_step(dir, step, opts);
            let predicted: f64 =
                dir.iter().zip(slope).map(|(r, s)| s * (-step * r).clamp(-limit, limit)).sum::<f64>() * dt * wbar;
            // Catmull–Rom can overshoot on very uneven increments; such a
            // step is simply rejected.
            if let Ok(g) = compose(gamma, &dg) {
                if let Ok(p) = redistribute(&lut, &g) {
                    if let Ok(e) = pair_energy(&q1, &p) {
                        if e < energy && e - energy <= ARMIJO * predicted {
                            return Ok(Some((g, p, e)));
                        }
                    }
                }
            }
            step *= 0.5;
        }
        Ok(None)
    };
    let nominal = |dir: &[f64]| dir.iter().fold(0.0f64, |a, r| a.max((step0 * r).abs())).min(limit);
    let gradient = |gamma: &Diffeomorphism, pts: &Contour, vk: &VelocityField| -> Result<Vec<f64>> {
        // Derivative of the looked-up points with respect to the step
        // variable `d_i` in `γ ∘ (t + d)`.
        let tangents: Vec<Vec2> =
            gamma.lifted().iter().enumerate().map(|(i, &t)| lut.derivative(t) * gamma.knot_slope(i)).collect();
        Ok(scaled_gradient(&energy_gradient(&q1, pts, &tangents)?, r1, &v1, pts, vk, m))
    };

    for iter in 1..=opts.max_iters {
        let vk = differentiate_points(pts.points())?;
        let res = el_residual_generalized(r1, &v1, &pts, &vk, m)?;
        let w = variation_weight(r1, &v1, &pts, &vk, m);
        let wbar = w.iter().sum::<f64>() / n as f64;
        let slope: Vec<f64> = res.iter().zip(&w).map(|(r, w)| r * w / wbar).collect();
        let dir = smooth(&slope, lambda)?;
        if nominal(&dir) < opts.residual_tol * dt {
            trace!("pair converged after {iter} iterations, energy {energy:e}");
            let grad = gradient(&gamma, &pts, &vk)?;
            return finish(r1, &v1, pts, gamma, trace, iter, true, &grad, m);
        }
        let mut accepted = search(&gamma, &dir, &slope, wbar, energy)?;
        if accepted.is_none() {
            // The residual is a discretization of the energy gradient, not
            // its exact value; near the discrete optimum the two can disagree
            // in sign. Fall back to the exact gradient for this iteration.
            let grad = gradient(&gamma, &pts, &vk)?;
            let exact = smooth(&grad, lambda)?;
            if nominal(&exact) < opts.residual_tol * dt {
                trace!("pair reached discrete stationarity after {iter} iterations, energy {energy:e}");
                return finish(r1, &v1, pts, gamma, trace, iter, true, &grad, m);
            }
            accepted = search(&gamma, &exact, &grad, wbar, energy)?;
            if accepted.is_none() {
                // Neither direction lowers the energy: the discrete energy is
                // stationary to rounding if either residual says so.
                let residual = normalized_residual(&res, r1, &pts);
                let gradient_residual = normalized_residual(&grad, r1, &pts);
                if residual.min(gradient_residual) <= opts.residual_tol {
                    debug!("pair stalled at residual {residual:e} (gradient {gradient_residual:e})");
                    return finish(r1, &v1, pts, gamma, trace, iter, true, &grad, m);
                }
                // Parts of `k` have been squeezed to (nearly) nothing: the
                // infimum lies on the boundary of the monotone maps and no
                // interior step lowers the energy further.
                if gamma.increments().iter().any(|&d| d < COLLAPSED * dt) {
                    warn!("pair stuck at a collapsed parameterization, residual {residual:e}");
                    return finish(r1, &v1, pts, gamma, trace, iter, false, &grad, m);
                }
                return Err(Error::NoDescent { residual });
            }
        }
        let (g, p, e) = accepted.expect("checked above");
        gamma = g;
        pts = p;
        energy = e;
        trace.push(e);
    }
    let vk = differentiate_points(pts.points())?;
    let grad = gradient(&gamma, &pts, &vk)?;
    debug!("pair hit max_iters = {}", opts.max_iters);
    finish(r1, &v1, pts, gamma, trace, opts.max_iters, false, &grad, m)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    r1: &Contour,
    v1: &VelocityField,
    pts: Contour,
    gamma: Diffeomorphism,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    grad: &[f64],
    m: f64,
) -> Result<PairwiseResult> {
    let vk = differentiate_points(pts.points())?;
    let res = el_residual_generalized(r1, v1, &pts, &vk, m)?;
    let residual = normalized_residual(&res, r1, &pts);
    let gradient_residual = normalized_residual(grad, r1, &pts);
    Ok(PairwiseResult { contour: pts, diffeo: gamma, energy_trace: trace, iterations, converged, residual, gradient_residual })
}

/// Reparameterizations of a whole system against one reference member.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemAlignment {
    /// The system with every member moved to its optimal parameterization.
    pub system: ContourSystem,
    /// Per member; identity for the reference.
    pub diffeos: Vec<Diffeomorphism>,
    /// Per member; empty for the reference.
    pub pairs: Vec<Option<PairwiseResult>>,
}

impl SystemAlignment {
    pub fn converged(&self) -> bool {
        self.pairs.iter().flatten().all(|p| p.converged)
    }
}

/// Optimizes every member against `sys[ref_index]` (which stays fixed).
pub fn optimize_system(sys: &ContourSystem, ref_index: usize, opts: &ReparamOptions) -> Result<SystemAlignment> {
    optimize_system_from(sys, ref_index, None, opts)
}

/// As [`optimize_system`], warm-started from per-member maps into the
/// parameters of the given contours.
pub fn optimize_system_from(
    sys: &ContourSystem,
    ref_index: usize,
    start: Option<&[Diffeomorphism]>,
    opts: &ReparamOptions,
) -> Result<SystemAlignment> {
    opts.validate()?;
    let n = sys.len();
    if n < 2 {
        return Err(Error::TooFewContours { need: 2, got: n });
    }
    if ref_index >= n {
        return Err(Error::InvalidOptions(format!("reference index {ref_index} out of range for {n} contours")));
    }
    if let Some(s) = start {
        if s.len() != n {
            return Err(Error::LengthMismatch(n, s.len()));
        }
    }
    let reference = &sys.contours()[ref_index];
    let pairs: Vec<Option<PairwiseResult>> = sys
        .contours()
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if i == ref_index {
                return Ok(None);
            }
            let res = match start {
                Some(s) => optimize_pairwise_from(reference, c, s[i].clone(), opts),
                None => optimize_pairwise(reference, c, opts),
            };
            res.map(Some).map_err(|e| e.in_contour(i))
        })
        .collect::<Result<_>>()?;
    let m = sys.point_count();
    let mut contours = Vec::with_capacity(n);
    let mut diffeos = Vec::with_capacity(n);
    for (i, p) in pairs.iter().enumerate() {
        match p {
            Some(p) => {
                contours.push(p.contour.clone());
                diffeos.push(p.diffeo.clone());
            }
            None => {
                contours.push(sys.contours()[i].clone());
                diffeos.push(Diffeomorphism::identity(m));
            }
        }
    }
    let system = ContourSystem::with_origin(contours, sys.origin_offset())?;
    Ok(SystemAlignment { system, diffeos, pairs })
}
