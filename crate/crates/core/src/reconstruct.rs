//! Recovery of a contour from its representation.
//!
//! The direction of every point is known, `u = q / |q|`, so only the ray
//! lengths `ρ_i = |r_i|` are unknown. They solve the nonlinear system
//! `f_i = |q_i| - ρ_i^m sqrt(|r'_i|) = 0` with `r = ρ u` differentiated by
//! central differences. Each Newton step is a cyclic tridiagonal linear
//! system because `r'_i` couples only the neighbours of `i`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::contour::{check_exponent, Contour, RpsvCurve, PERIOD};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Cyclic tridiagonal system `A x = b`.
///
/// Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`
/// with indices modulo `M`; the two corner entries therefore live in
/// `sub[0]` (`a_{0,M-1}`) and `sup[M-1]` (`a_{M-1,0}`).
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicBandSystem {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl CyclicBandSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `a_{0,M-1}`.
    pub fn corner_top_right(&self) -> f64 {
        self.sub[0]
    }

    /// `a_{M-1,0}`.
    pub fn corner_bottom_left(&self) -> f64 {
        self.sup[self.len() - 1]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                self.sub[i] * x[(i + n - 1) % n] + self.diag[i] * x[i] + self.sup[i] * x[(i + 1) % n]
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, (i + n - 1) % n)] += self.sub[i];
            a[(i, i)] += self.diag[i];
            a[(i, (i + 1) % n)] += self.sup[i];
        }
        a
    }

    fn check(&self) -> Result<()> {
        let n = self.diag.len();
        for len in [self.sub.len(), self.sup.len(), self.rhs.len()] {
            if len != n {
                return Err(Error::LengthMismatch(n, len));
            }
        }
        if n < 3 {
            return Err(Error::TooFewPoints { min: 3, got: n });
        }
        Ok(())
    }
}

/// Where the Newton iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `ρ_i = |q_i| / sqrt(s̄_i)` from known constituent speeds `s̄`.
    /// Falls back to [`InitialGuess::FromQPower`] when no speeds are given.
    #[default]
    FromSystemSpeeds,
    /// `ρ_i = (|q_i| / sqrt(θ'_i))^{2/(2m+1)}` with `θ'` the angular rate of
    /// the direction field; exact for a centred circle.
    FromQPower,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructOptions {
    pub max_newton_iters: usize,
    /// Stop once `max |f| <= residual_tol * max |q|`.
    pub residual_tol: f64,
    pub initial_guess: InitialGuess,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { max_newton_iters: 50, residual_tol: 1e-12, initial_guess: InitialGuess::default() }
    }
}

impl ReconstructOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidOptions("max_newton_iters must be positive".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidOptions("newton residual_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Unit directions `u_i = q_i / |q_i|`.
pub fn direction_field(q: &RpsvCurve) -> Result<Vec<Vec2>> {
    q.vectors()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.norm();
            if n > 0.0 {
                Ok(*v / n)
            } else {
                Err(Error::RayThroughOrigin(i))
            }
        })
        .collect()
}

/// Indices where the direction field turns backwards, i.e. where the rays
/// stop sweeping monotonically around the origin.
pub fn orientation_reversals(u: &[Vec2]) -> Vec<usize> {
    let n = u.len();
    let turn: Vec<f64> = (0..n).map(|i| u[i].cross(u[(i + 1) % n])).collect();
    let total: f64 = turn.iter().sum();
    (0..n).filter(|&i| turn[i] * total < 0.0).collect()
}

struct Geometry {
    speed: Vec<f64>,
    tangent: Vec<Vec2>,
}

fn ray_geometry(u: &[Vec2], rho: &[f64]) -> Result<Geometry> {
    let n = u.len();
    let dt = PERIOD / n as f64;
    let mut speed = Vec::with_capacity(n);
    let mut tangent = Vec::with_capacity(n);
    for i in 0..n {
        let prev = u[(i + n - 1) % n] * rho[(i + n - 1) % n];
        let next = u[(i + 1) % n] * rho[(i + 1) % n];
        let v = (next - prev) / (2.0 * dt);
        let s = v.norm();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::StationaryPoint(i));
        }
        speed.push(s);
        tangent.push(v / s);
    }
    Ok(Geometry { speed, tangent })
}

/// `f_i = |q_i| - ρ_i^m sqrt(s_i)` for ray lengths `rho` along `u`.
pub fn reconstruction_residual(q: &RpsvCurve, u: &[Vec2], rho: &[f64]) -> Result<Vec<f64>> {
    let g = ray_geometry(u, rho)?;
    let m = q.exponent();
    Ok(q.vectors()
        .iter()
        .zip(rho)
        .zip(&g.speed)
        .map(|((qi, &r), &s)| qi.norm() - pow_m(r, m) * s.sqrt())
        .collect())
}

#[inline]
fn pow_m(r: f64, m: f64) -> f64 {
    if m == 1.0 {
        r
    } else {
        r.powf(m)
    }
}

fn check_guess(q: &RpsvCurve, u: &[Vec2], guess: &[f64]) -> Result<()> {
    if guess.len() != q.len() {
        return Err(Error::LengthMismatch(q.len(), guess.len()));
    }
    if u.len() != q.len() {
        return Err(Error::LengthMismatch(q.len(), u.len()));
    }
    if let Some(i) = guess.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidOptions(format!("ray length guess at index {i} is not positive")));
    }
    Ok(())
}

/// Linearised system for the next ray lengths, given the current `guess`.
///
/// For `m != 0` each row is scaled so the diagonal is one; the unknowns are
/// the new ray lengths. For `m = 0` the diagonal vanishes and the row is
/// scaled by `4Δt sqrt(s_i)`.
pub fn assemble_newton_system(q: &RpsvCurve, u: &[Vec2], guess: &[f64]) -> Result<CyclicBandSystem> {
    let m = q.exponent();
    check_exponent(m)?;
    check_guess(q, u, guess)?;
    let n = q.len();
    let dt = q.dt();
    let g = ray_geometry(u, guess)?;
    let mut sys = CyclicBandSystem {
        diag: vec![0.0; n],
        sub: vec![0.0; n],
        sup: vec![0.0; n],
        rhs: vec![0.0; n],
    };
    for i in 0..n {
        let up = u[(i + 1) % n];
        let um = u[(i + n - 1) % n];
        let e = g.tangent[i];
        let s = g.speed[i];
        let qn = q.vectors()[i].norm();
        if m == 0.0 {
            sys.sup[i] = e.dot(up);
            sys.sub[i] = -e.dot(um);
            sys.rhs[i] = 4.0 * dt * (qn * s.sqrt() - 0.5 * s);
        } else {
            let rho = guess[i];
            let c = rho / (4.0 * m * dt * s);
            sys.diag[i] = 1.0;
            sys.sup[i] = c * e.dot(up);
            sys.sub[i] = -c * e.dot(um);
            sys.rhs[i] = qn / (m * rho.powf(m - 1.0) * s.sqrt()) + (1.0 - 1.0 / (2.0 * m)) * rho;
        }
    }
    Ok(sys)
}

/// The `m = 1` system written out directly.
pub fn assemble_newton_system_m1(q: &RpsvCurve, u: &[Vec2], guess: &[f64]) -> Result<CyclicBandSystem> {
    if q.exponent() != 1.0 {
        return Err(Error::ExponentMismatch(q.exponent(), 1.0));
    }
    check_guess(q, u, guess)?;
    let n = q.len();
    let dt = q.dt();
    let g = ray_geometry(u, guess)?;
    let mut sys = CyclicBandSystem {
        diag: vec![1.0; n],
        sub: vec![0.0; n],
        sup: vec![0.0; n],
        rhs: vec![0.0; n],
    };
    for i in 0..n {
        let e = g.tangent[i];
        let s = g.speed[i];
        let c = guess[i] / (4.0 * dt * s);
        sys.sup[i] = c * e.dot(u[(i + 1) % n]);
        sys.sub[i] = -c * e.dot(u[(i + n - 1) % n]);
        sys.rhs[i] = q.vectors()[i].norm() / s.sqrt() + 0.5 * guess[i];
    }
    Ok(sys)
}

/// Largest system for which the dense fallback is attempted.
pub const DENSE_FALLBACK_LIMIT: usize = 2048;

const PIVOT_EPS: f64 = 1e-13;
const MAX_HALVINGS: usize = 30;

/// Plain tridiagonal elimination; `None` on a vanishing pivot.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let scale = diag.iter().chain(sub).chain(sup).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() <= PIVOT_EPS * scale {
        return None;
    }
    c[0] = sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c[i - 1];
        if pivot.abs() <= PIVOT_EPS * scale || !pivot.is_finite() {
            return None;
        }
        c[i] = sup[i] / pivot;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Sherman–Morrison: the corners are a rank-one correction of a tridiagonal
/// matrix, so two tridiagonal solves and a combination give the answer.
fn cyclic_thomas(sys: &CyclicBandSystem) -> Option<Vec<f64>> {
    let n = sys.len();
    let alpha = sys.corner_bottom_left();
    let beta = sys.corner_top_right();
    let b0 = sys.diag[0];
    let gamma = if b0 != 0.0 { -b0 } else { -1.0 };
    let mut diag = sys.diag.clone();
    diag[0] -= gamma;
    diag[n - 1] -= alpha * beta / gamma;
    let x = thomas(&sys.sub, &diag, &sys.sup, &sys.rhs)?;
    let mut w = vec![0.0; n];
    w[0] = gamma;
    w[n - 1] = alpha;
    let z = thomas(&sys.sub, &diag, &sys.sup, &w)?;
    let denom = 1.0 + z[0] + beta * z[n - 1] / gamma;
    if denom.abs() <= PIVOT_EPS {
        return None;
    }
    let fact = (x[0] + beta * x[n - 1] / gamma) / denom;
    Some(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn residual_ok(sys: &CyclicBandSystem, x: &[f64]) -> bool {
    let ax = sys.mul_vec(x);
    let r = max_abs(&ax.iter().zip(&sys.rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
    r.is_finite() && r <= 1e-10 * max_abs(&sys.rhs).max(f64::MIN_POSITIVE)
}

/// Solves a cyclic tridiagonal system.
///
/// Elimination with a rank-one corner correction is tried first; if a pivot
/// vanishes or the result fails the residual check, systems up to
/// [`DENSE_FALLBACK_LIMIT`] are retried with dense LU.
pub fn solve_cyclic_band(sys: &CyclicBandSystem) -> Result<Vec<f64>> {
    sys.check()?;
    if let Some(x) = cyclic_thomas(sys) {
        if residual_ok(sys, &x) {
            return Ok(x);
        }
    }
    if sys.len() > DENSE_FALLBACK_LIMIT {
        return Err(Error::SingularSystem);
    }
    debug!("cyclic elimination failed, using dense LU for M = {}", sys.len());
    let x = sys
        .to_dense()
        .lu()
        .solve(&DVector::from_column_slice(&sys.rhs))
        .ok_or(Error::SingularSystem)?;
    let x: Vec<f64> = x.iter().copied().collect();
    if residual_ok(sys, &x) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

/// Diagnostics of a reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub contour: Contour,
    pub ray_lengths: Vec<f64>,
    pub directions: Vec<Vec2>,
    /// `max |f|` before each Newton step and after the last one.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// Some Newton step was clamped (non-positive ray length) or shortened.
    pub damped: bool,
    /// Indices where the direction field reverses orientation.
    pub reversals: Vec<usize>,
}

fn initial_guess(
    q: &RpsvCurve,
    u: &[Vec2],
    opts: &ReconstructOptions,
    speeds: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let m = q.exponent();
    match (opts.initial_guess, speeds) {
        (InitialGuess::FromSystemSpeeds, Some(s)) if m == 1.0 => {
            if s.len() != q.len() {
                return Err(Error::LengthMismatch(q.len(), s.len()));
            }
            Ok(q.vectors().iter().zip(s).map(|(v, s)| v.norm() / s.sqrt()).collect())
        }
        (InitialGuess::FromSystemSpeeds, Some(s)) => {
            if s.len() != q.len() {
                return Err(Error::LengthMismatch(q.len(), s.len()));
            }
            // |q| = ρ^m sqrt(s)  =>  ρ = (|q| / sqrt(s))^{1/m}
            if m == 0.0 {
                return Ok(coarse_to_fine(q, u, opts));
            }
            Ok(q.vectors().iter().zip(s).map(|(v, s)| (v.norm() / s.sqrt()).powf(1.0 / m)).collect())
        }
        _ => Ok(coarse_to_fine(q, u, opts)),
    }
}

/// Smallest resolution at which the coarse-to-fine guess stops recursing.
const COARSE_POINTS: usize = 64;

/// Solves the problem on every other point first and interpolates.
///
/// The central-difference equations also admit oscillating (odd/even) roots,
/// and from a rough start Newton may land on one at high resolution. A
/// coarse solution is smooth and close to the fine one, which keeps the
/// fine iteration in the right basin.
fn coarse_to_fine(q: &RpsvCurve, u: &[Vec2], opts: &ReconstructOptions) -> Vec<f64> {
    let n = q.len();
    if !n.is_multiple_of(2) || n / 2 < COARSE_POINTS {
        return q_power(q, u);
    }
    let coarse_q: Vec<Vec2> = q.vectors().iter().step_by(2).copied().collect();
    let coarse = RpsvCurve::new(coarse_q, q.exponent())
        .and_then(|qc| {
            let uc: Vec<Vec2> = u.iter().step_by(2).copied().collect();
            let guess = coarse_to_fine(&qc, &uc, opts);
            if needs_band_limit(qc.exponent()) {
                // Subsampled data need not be exactly consistent at the coarse
                // level; the least-squares fit is all the guess needs.
                reconstruct_band_limited(&qc, opts, uc, guess, Vec::new(), true)
            } else {
                reconstruct_from(&qc, opts, guess)
            }
        });
    match coarse {
        Ok(c) => {
            let rc = &c.ray_lengths;
            let k = rc.len();
            (0..n)
                .map(|i| if i % 2 == 0 { rc[i / 2] } else { 0.5 * (rc[i / 2] + rc[(i / 2 + 1) % k]) })
                .collect()
        }
        Err(e) => {
            debug!("coarse reconstruction at M = {} failed ({e}); using direct guess", n / 2);
            q_power(q, u)
        }
    }
}

/// Balances `|q| = ρ^m sqrt(|r'|)` with `|r'| ≈ ρ θ'`, where `θ'` is the
/// angular rate of the (known) direction field. Exact for centred circles.
fn q_power(q: &RpsvCurve, u: &[Vec2]) -> Vec<f64> {
    let m = q.exponent();
    let n = u.len();
    let dt = q.dt();
    let mean_rate = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let turn = u[(i + n - 1) % n].cross(u[(i + 1) % n]).clamp(-1.0, 1.0).asin().abs();
            let rate = turn / (2.0 * dt);
            // Guard against rays that momentarily stall or reverse.
            let rate = if rate > 1e-3 * mean_rate { rate } else { mean_rate };
            (q.vectors()[i].norm() / rate.sqrt()).powf(2.0 / (2.0 * m + 1.0))
        })
        .collect()
}

/// Reconstructs a contour from its representation.
pub fn reconstruct(q: &RpsvCurve, opts: &ReconstructOptions) -> Result<Contour> {
    reconstruct_detailed(q, opts, None).map(|r| r.contour)
}

/// Reconstructs using per-point speeds `s̄` for the initial guess when the
/// options ask for it.
pub fn reconstruct_with_speeds(
    q: &RpsvCurve,
    opts: &ReconstructOptions,
    speeds: Option<&[f64]>,
) -> Result<Contour> {
    reconstruct_detailed(q, opts, speeds).map(|r| r.contour)
}

pub fn reconstruct_detailed(
    q: &RpsvCurve,
    opts: &ReconstructOptions,
    speeds: Option<&[f64]>,
) -> Result<Reconstruction> {
    check_exponent(q.exponent())?;
    opts.validate()?;
    let u = direction_field(q)?;
    let guess = initial_guess(q, &u, opts, speeds)?;
    reconstruct_from(q, opts, guess)
}

/// Newton iteration from explicit starting ray lengths.
pub fn reconstruct_from(q: &RpsvCurve, opts: &ReconstructOptions, guess: Vec<f64>) -> Result<Reconstruction> {
    let m = q.exponent();
    check_exponent(m)?;
    opts.validate()?;
    let u = direction_field(q)?;
    check_guess(q, &u, &guess)?;
    let reversals = orientation_reversals(&u);
    if !reversals.is_empty() {
        warn!(
            "direction field reverses orientation at {} of {} points; contour is not star-shaped about the origin",
            reversals.len(),
            u.len()
        );
    }

    if needs_band_limit(m) {
        return reconstruct_band_limited(q, opts, u, guess, reversals, false);
    }
    let target = opts.residual_tol * q.max_norm();
    let mut rho = guess;
    let mut f = reconstruction_residual(q, &u, &rho)?;
    let mut history = Vec::new();
    let mut damped = false;
    for iter in 0..=opts.max_newton_iters {
        let res = max_abs(&f);
        history.push(res);
        if !res.is_finite() {
            return Err(Error::NotConverged { iterations: iter, residual: res });
        }
        if res <= target {
            debug!("reconstruction converged in {iter} Newton iterations, residual {res:e}");
            let points = u.iter().zip(&rho).map(|(d, r)| *d * *r).collect();
            let contour = Contour::new(points)?;
            return Ok(Reconstruction {
                contour,
                ray_lengths: rho,
                directions: u,
                residual_history: history,
                iterations: iter,
                damped,
                reversals,
            });
        }
        if iter == opts.max_newton_iters {
            return Err(Error::NotConverged { iterations: iter, residual: res });
        }
        let sys = assemble_newton_system(q, &u, &rho)?;
        let mut next = solve_cyclic_band(&sys)?;
        for (new, old) in next.iter_mut().zip(&rho) {
            if !(*new > 0.0 && new.is_finite()) {
                *new = 0.1 * old;
                damped = true;
            }
        }
        // Far from the solution a full step can jump to a spurious
        // (checkerboard) root of the discrete equations; backtrack until the
        // residual norm drops.
        let norm = l2(&f);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = rho.iter().zip(&next).map(|(r, n)| r + lambda * (n - r)).collect();
            if let Ok(ft) = reconstruction_residual(q, &u, &trial) {
                if l2(&ft) < norm {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
            damped = true;
        }
        match accepted {
            Some((trial, ft)) => {
                rho = trial;
                f = ft;
            }
            None => return Err(Error::NotConverged { iterations: iter + 1, residual: res }),
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Accuracy accepted for `m = 0` once Gauss–Newton stops making progress;
/// the band limit bounds what is attainable for contours with fine detail.
const BAND_LIMITED_TOL: f64 = 1e-6;

/// Exponents below this magnitude use the band-limited reconstruction.
pub const BAND_LIMIT_EXPONENT: f64 = 0.75;

/// For small `|m|` the linearised central-difference equations have (nearly)
/// free oscillating modes: on a circle row `i` reads
/// `ρ_i + (ρ_{i+1} + ρ_{i-1}) / (4m) ≈ b_i`, whose symbol `1 + cos(ω)/(2m)`
/// vanishes at `cos ω = -2m` for `|m| <= 1/2` and stays small just above.
/// At `m = 0` the diagonal is gone altogether and odd and even unknowns are
/// chained separately.
pub fn needs_band_limit(m: f64) -> bool {
    m.abs() < BAND_LIMIT_EXPONENT
}

/// Reconstruction for exponents with near-free oscillating modes (see
/// [`needs_band_limit`]).
///
/// Many discrete solutions sit next to the smooth one, so the ray lengths
/// are restricted to the lowest `M/8` Fourier modes and fitted by
/// Gauss–Newton. For `m = 0` the overall scale is then fixed by matching the
/// total length `Σ|r'|Δt` to `Σ|q|²Δt`.
fn reconstruct_band_limited(
    q: &RpsvCurve,
    opts: &ReconstructOptions,
    u: Vec<Vec2>,
    guess: Vec<f64>,
    reversals: Vec<usize>,
    accept_stall: bool,
) -> Result<Reconstruction> {
    let n = q.len();
    if n > DENSE_FALLBACK_LIMIT {
        return Err(Error::SingularSystem);
    }
    let modes = (n / 8).max((n / 4 - 1).min(8));
    let basis = DMatrix::from_fn(n, 2 * modes + 1, |i, j| {
        let k = j.div_ceil(2) as f64;
        let phase = 2.0 * std::f64::consts::PI * k * i as f64 / n as f64;
        match j {
            0 => 1.0,
            _ if j % 2 == 1 => phase.cos(),
            _ => phase.sin(),
        }
    });
    let lstsq = |a: DMatrix<f64>, b: DVector<f64>| -> Result<DVector<f64>> {
        let svd = a.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        svd.solve(&b, eps).map_err(|_| Error::SingularSystem)
    };
    let coeffs = lstsq(basis.clone(), DVector::from_vec(guess))?;
    let mut rho: Vec<f64> = (&basis * coeffs).iter().copied().collect();
    if rho.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::NotConverged { iterations: 0, residual: f64::INFINITY });
    }

    let qmax = q.max_norm();
    let target = opts.residual_tol * qmax;
    let mut f = reconstruction_residual(q, &u, &rho)?;
    let mut history = Vec::new();
    let mut damped = false;
    let mut iterations = 0;
    loop {
        let res = max_abs(&f);
        history.push(res);
        if res <= target {
            break;
        }
        if iterations == opts.max_newton_iters {
            if accept_stall {
                break;
            }
            return Err(Error::NotConverged { iterations, residual: res });
        }
        iterations += 1;
        let sys = assemble_newton_system(q, &u, &rho)?;
        let ar = sys.mul_vec(&rho);
        let r = DVector::from_iterator(n, sys.rhs.iter().zip(&ar).map(|(b, a)| b - a));
        let step: Vec<f64> = (&basis * lstsq(sys.to_dense() * &basis, r)?).iter().copied().collect();
        let norm = l2(&f);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = rho.iter().zip(&step).map(|(r, d)| r + lambda * d).collect();
            if trial.iter().all(|r| *r > 0.0) {
                if let Ok(ft) = reconstruction_residual(q, &u, &trial) {
                    if l2(&ft) < norm {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
            }
            lambda *= 0.5;
            damped = true;
        }
        let stalled = max_abs(&step) <= 1e-13 * max_abs(&rho);
        match accepted {
            Some((trial, ft)) if !stalled => {
                rho = trial;
                f = ft;
            }
            _ if accept_stall || res <= BAND_LIMITED_TOL * qmax => {
                debug!("band-limited reconstruction stalled at residual {res:e}");
                break;
            }
            _ => return Err(Error::NotConverged { iterations, residual: res }),
        }
    }

    if q.exponent() == 0.0 {
        let g = ray_geometry(&u, &rho)?;
        let length: f64 = g.speed.iter().sum();
        let target_length: f64 = q.vectors().iter().map(|v| v.norm_sq()).sum();
        let scale = target_length / length;
        for r in &mut rho {
            *r *= scale;
        }
        *history.last_mut().expect("history is never empty") =
            max_abs(&reconstruction_residual(q, &u, &rho)?);
    }
    let contour = Contour::new(u.iter().zip(&rho).map(|(d, r)| *d * *r).collect())?;
    Ok(Reconstruction {
        contour,
        ray_lengths: rho,
        directions: u,
        residual_history: history,
        iterations,
        damped,
        reversals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{knot, to_rpsv};
    use std::f64::consts::PI;

    fn circle(m: usize, radius: f64) -> Contour {
        Contour::new((0..m).map(|i| Vec2::from_polar(radius, 2.0 * PI * knot(i, m))).collect()).unwrap()
    }

    fn star(m: usize) -> Contour {
        Contour::new(
            (0..m)
                .map(|i| {
                    let t = 2.0 * PI * knot(i, m);
                    let r = 1.0 + 0.2 * (3.0 * t).cos() + 0.1 * (5.0 * t + 0.3).sin();
                    Vec2::from_polar(r, t)
                })
                .collect(),
        )
        .unwrap()
    }

    fn dense_solve(sys: &CyclicBandSystem) -> Vec<f64> {
        let x = sys.to_dense().lu().solve(&DVector::from_column_slice(&sys.rhs)).unwrap();
        x.iter().copied().collect()
    }

    #[test]
    fn identity_system_returns_rhs() {
        let n = 9;
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let sys = CyclicBandSystem { diag: vec![1.0; n], sub: vec![0.0; n], sup: vec![0.0; n], rhs: rhs.clone() };
        assert_eq!(solve_cyclic_band(&sys).unwrap(), rhs);
    }

    #[test]
    fn four_by_four_against_hand_inverse() {
        // A = [[4,1,0,1],[1,4,1,0],[0,1,4,1],[1,0,1,4]] is circulant with
        // eigenvalues 6, 4, 2, 4; A x = (6,6,6,6) has x = (1,1,1,1) and
        // A x = (4,0,-4,0) has x = (1,0,-1,0).
        let sys = |rhs: Vec<f64>| CyclicBandSystem {
            diag: vec![4.0; 4],
            sub: vec![1.0; 4],
            sup: vec![1.0; 4],
            rhs,
        };
        let x = solve_cyclic_band(&sys(vec![6.0; 4])).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let x = solve_cyclic_band(&sys(vec![4.0, 0.0, -4.0, 0.0])).unwrap();
        for (a, b) in x.iter().zip([1.0, 0.0, -1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_dominant_system_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 512;
        let sub: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sup: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.5 + sub[i].abs() + sup[i].abs() * rng.gen::<f64>()).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let sys = CyclicBandSystem { diag, sub, sup, rhs };
        let x = solve_cyclic_band(&sys).unwrap();
        let d = dense_solve(&sys);
        let scale = max_abs(&d);
        for (a, b) in x.iter().zip(&d) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zero_leading_pivot_uses_dense_fallback() {
        let n = 8;
        let mut diag = vec![3.0; n];
        diag[0] = 0.0;
        let sys = CyclicBandSystem { diag, sub: vec![1.0; n], sup: vec![-1.0; n], rhs: vec![1.0; n] };
        let x = solve_cyclic_band(&sys).unwrap();
        assert!(residual_ok(&sys, &x));
    }

    #[test]
    fn singular_system_is_reported() {
        let n = 8;
        let sys = CyclicBandSystem { diag: vec![2.0; n], sub: vec![-1.0; n], sup: vec![-1.0; n], rhs: vec![1.0; n] };
        assert_eq!(solve_cyclic_band(&sys), Err(Error::SingularSystem));
    }

    #[test]
    fn direction_field_examples() {
        let c = circle(32, 1.0);
        let q = to_rpsv(&c, 1.0).unwrap();
        for (u, r) in direction_field(&q).unwrap().iter().zip(c.points()) {
            assert!(u.distance(*r) < 1e-15);
        }
        let scaled = RpsvCurve::new(q.vectors().iter().map(|v| *v * 3.7).collect(), 1.0).unwrap();
        let a = direction_field(&q).unwrap();
        let b = direction_field(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.distance(*y) < 1e-15);
        }
        let s = star(64);
        let u = direction_field(&to_rpsv(&s, 1.0).unwrap()).unwrap();
        for (d, r) in u.iter().zip(s.points()) {
            assert!(d.distance(*r / r.norm()) < 1e-12);
        }
        let mut zero = q.vectors().to_vec();
        zero[5] = Vec2::ZERO;
        let z = RpsvCurve::new(zero, 1.0).unwrap();
        assert_eq!(direction_field(&z), Err(Error::RayThroughOrigin(5)));
    }

    #[test]
    fn circle_is_a_newton_fixed_point() {
        let m = 128;
        let q = to_rpsv(&circle(m, 1.0), 1.0).unwrap();
        let u = direction_field(&q).unwrap();
        let sys = assemble_newton_system(&q, &u, &vec![1.0; m]).unwrap();
        for x in solve_cyclic_band(&sys).unwrap() {
            assert!((x - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn general_assembly_matches_m1_bit_for_bit() {
        let s = star(96);
        let q = to_rpsv(&s, 1.0).unwrap();
        let u = direction_field(&q).unwrap();
        let guess: Vec<f64> = s.points().iter().enumerate().map(|(i, p)| p.norm() * (1.0 + 0.01 * (i as f64).sin())).collect();
        let a = assemble_newton_system(&q, &u, &guess).unwrap();
        let b = assemble_newton_system_m1(&q, &u, &guess).unwrap();
        assert_eq!(a, b);
        assert_eq!(solve_cyclic_band(&a).unwrap(), solve_cyclic_band(&b).unwrap());
    }

    /// The linear system is Newton's linearisation of f: for the new iterate
    /// `x = guess + h`, the row-scaled residual of `A x = b` must equal the
    /// scaled `f(x)` up to second order in `h`.
    #[test]
    fn assembly_is_first_order_taylor_expansion() {
        for &m in &[1.0, 0.7, 2.0, 0.0] {
            let s = star(128);
            let q = to_rpsv(&s, m).unwrap();
            let u = direction_field(&q).unwrap();
            let base: Vec<f64> = s.points().iter().map(|p| p.norm() * 1.01).collect();
            let sys = assemble_newton_system(&q, &u, &base).unwrap();
            let g = ray_geometry(&u, &base).unwrap();
            let dt = q.dt();
            // Row scaling that turns -J into A (see assembly).
            let scale: Vec<f64> = (0..base.len())
                .map(|i| {
                    if m == 0.0 {
                        4.0 * dt * g.speed[i].sqrt()
                    } else {
                        1.0 / (m * base[i].powf(m - 1.0) * g.speed[i].sqrt())
                    }
                })
                .collect();
            let mut errs = Vec::new();
            for &eps in &[1e-3, 1e-4] {
                let x: Vec<f64> = base.iter().enumerate().map(|(i, r)| r + eps * (0.3 * i as f64).cos()).collect();
                let ax = sys.mul_vec(&x);
                let f = reconstruction_residual(&q, &u, &x).unwrap();
                // A x - b = -scale * (f_lin(x)), f_lin ≈ f
                let err = (0..x.len())
                    .map(|i| ((ax[i] - sys.rhs[i]) + scale[i] * f[i]).abs())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
            let ratio = errs[0] / errs[1];
            assert!(ratio > 50.0 && ratio < 200.0, "m={m} ratio={ratio} errs={errs:?}");
        }
    }

    #[test]
    fn circle_from_half_radius_guess() {
        let m = 128;
        let q = to_rpsv(&circle(m, 1.0), 1.0).unwrap();
        let r = reconstruct_from(&q, &ReconstructOptions::default(), vec![0.5; m]).unwrap();
        for p in r.contour.points() {
            assert!((p.norm() - 1.0).abs() < 1e-8);
        }
        // Quadratic convergence: the error exponent roughly doubles at the end.
        let h = &r.residual_history;
        let k = h.len();
        assert!(k >= 4, "{h:?}");
        let (a, b, c) = (h[k - 4].ln(), h[k - 3].ln(), h[k - 2].ln());
        assert!((c - b) / (b - a) > 1.5, "{h:?}");
    }

    #[test]
    fn star_round_trip() {
        let s = star(256);
        let q = to_rpsv(&s, 1.0).unwrap();
        let opts = ReconstructOptions { initial_guess: InitialGuess::FromQPower, ..Default::default() };
        let r = reconstruct_detailed(&q, &opts, None).unwrap();
        assert!(r.iterations <= 20, "{}", r.iterations);
        let diam = crate::geometry::diameter(s.points());
        for (a, b) in r.contour.points().iter().zip(s.points()) {
            assert!(a.distance(*b) <= 1e-6 * diam);
        }
        assert_eq!(r.directions, direction_field(&q).unwrap());
        for w in r.residual_history.windows(2).skip(1) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn generalized_exponent_round_trips() {
        let s = star(256);
        for &m in &[0.5, 2.0, -0.25] {
            let q = to_rpsv(&s, m).unwrap();
            let v = crate::contour::differentiate(&s).unwrap();
            let opts = ReconstructOptions::default();
            let r = reconstruct_detailed(&q, &opts, Some(&v.speed)).unwrap();
            for (a, b) in r.contour.points().iter().zip(s.points()) {
                assert!(a.distance(*b) < 1e-8, "m={m}");
            }
        }
    }

    #[test]
    fn zero_exponent_round_trip() {
        let s = star(256);
        let q = to_rpsv(&s, 0.0).unwrap();
        let r = reconstruct(&q, &ReconstructOptions::default()).unwrap();
        let diam = crate::geometry::diameter(s.points());
        let err = r.points().iter().zip(s.points()).map(|(a, b)| a.distance(*b)).fold(0.0, f64::max);
        assert!(err <= 1e-6 * diam, "err={err}");
    }

    #[test]
    fn singular_exponent_rejected() {
        let q = to_rpsv(&circle(16, 1.0), 1.0).unwrap();
        let bad = RpsvCurve::new(q.vectors().to_vec(), -0.5);
        assert_eq!(bad, Err(Error::SingularExponent));
    }
}
