//! Mean of a contour system: pointwise mean in representation space,
//! proper-centroid shifts of the basis origin, and the alternating outer loop.

use log::{debug, warn};

use crate::contour::{differentiate, distance_sq, to_rpsv, Contour, ContourSystem, RpsvCurve};
use crate::error::{Error, Result};
use crate::geometry::{winding_number, Vec2};
use crate::reconstruct::{reconstruct_with_speeds, ReconstructOptions};
use crate::reparam::{
    el_residual_generalized, normalized_residual, optimize_system_from, Diffeomorphism, ReparamOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanOptions {
    pub outer_max_iters: usize,
    /// Stop once the relative change of the system energy drops below this.
    pub outer_energy_tol: f64,
    /// Representation exponent; overrides the exponent in `reparam`.
    pub exponent: f64,
    /// Member held fixed during reparameterization.
    pub reference: usize,
    pub reparam: ReparamOptions,
    pub reconstruct: ReconstructOptions,
}

impl Default for MeanOptions {
    fn default() -> Self {
        Self {
            outer_max_iters: 50,
            outer_energy_tol: 1e-6,
            exponent: 1.0,
            reference: 0,
            reparam: ReparamOptions::default(),
            reconstruct: ReconstructOptions::default(),
        }
    }
}

impl MeanOptions {
    pub fn validate(&self) -> Result<()> {
        if self.outer_max_iters == 0 {
            return Err(Error::InvalidOptions("outer_max_iters must be positive".into()));
        }
        if !(self.outer_energy_tol > 0.0 && self.outer_energy_tol.is_finite()) {
            return Err(Error::InvalidOptions("outer_energy_tol must be positive".into()));
        }
        crate::contour::check_exponent(self.exponent)?;
        self.reparam_options().validate()?;
        self.reconstruct.validate()
    }

    /// The reparameterization options with the exponent filled in.
    pub fn reparam_options(&self) -> ReparamOptions {
        ReparamOptions { exponent: self.exponent, ..self.reparam }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanResult {
    /// The mean contour in the input frame.
    pub mean_contour: Contour,
    /// Representation of the mean relative to the final basis origin.
    pub mean_rpsv: RpsvCurve,
    /// The constituents at their optimal parameterizations, in the input frame.
    pub aligned: Vec<Contour>,
    /// Per constituent; maps the uniform parameter to the input parameter.
    pub diffeos: Vec<Diffeomorphism>,
    /// Final basis origin in the input frame.
    pub origin: Vec2,
    /// Sum of the proper-centroid shifts applied after the initial move to
    /// the homogeneous centroid.
    pub centroid_displacement: Vec2,
    /// System energy after every accepted outer iteration.
    pub energy_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when the centroid update found all constituents identical.
    pub identical_system: bool,
}

impl MeanResult {
    pub fn energy(&self) -> f64 {
        self.energy_trace.last().copied().unwrap_or(0.0)
    }
}

/// Pointwise mean of the members' representations.
pub fn rpsv_mean(sys: &ContourSystem, m: f64) -> Result<RpsvCurve> {
    let n = sys.len();
    if n == 0 {
        return Err(Error::TooFewContours { need: 1, got: 0 });
    }
    let mut acc = vec![Vec2::ZERO; sys.point_count()];
    for (k, c) in sys.contours().iter().enumerate() {
        let q = to_rpsv(c, m).map_err(|e| e.in_contour(k))?;
        for (a, v) in acc.iter_mut().zip(q.vectors()) {
            *a += *v;
        }
    }
    let scale = 1.0 / n as f64;
    RpsvCurve::new(acc.into_iter().map(|a| a * scale).collect(), m)
}

/// `Σ_i ‖q(r − δd) − q(r_i − δd)‖²` with `r` the mean contour. Speeds are
/// unaffected by the translation.
pub fn double_energy(sys: &ContourSystem, mean: &Contour, delta: Vec2, m: f64) -> Result<f64> {
    let qm = to_rpsv(&mean.translated(-delta), m)?;
    let mut total = 0.0;
    for (k, c) in sys.contours().iter().enumerate() {
        let q = to_rpsv(&c.translated(-delta), m).map_err(|e| e.in_contour(k))?;
        total += distance_sq(&qm, &q)?;
    }
    Ok(total)
}

/// Closed-form centroid displacement and whether the system was found to be
/// made of identical contours (in which case the displacement is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidDisplacement {
    pub delta: Vec2,
    pub identical_system: bool,
}

/// Minimizer of [`double_energy`] over `δd` for `m = 1`:
///
/// `δd = Σ_i ∮ (r_i √s_i − r √s) √s_i dt / Σ_i ∮ (√s_i − √s)² dt`
///
/// The numerator drops the `−√s` factor of the exact stationarity condition;
/// the dropped term is `n ∮ (q̄ − q(r)) √s dt`, which vanishes when `r` is
/// the reconstruction of the mean representation `q̄`.
pub fn proper_centroid_displacement(sys: &ContourSystem, mean: &Contour) -> Result<CentroidDisplacement> {
    let m = mean.len();
    if sys.point_count() != m {
        return Err(Error::LengthMismatch(sys.point_count(), m));
    }
    let dt = mean.dt();
    let vm = differentiate(mean)?;
    let mut num = Vec2::ZERO;
    let mut den = 0.0;
    let mut length = 0.0;
    for (k, c) in sys.contours().iter().enumerate() {
        let v = differentiate(c).map_err(|e| e.in_contour(k))?;
        for i in 0..m {
            let si = v.speed[i].sqrt();
            let s = vm.speed[i].sqrt();
            num += (c.points()[i] * si - mean.points()[i] * s) * si;
            den += (si - s) * (si - s);
            length += v.speed[i];
        }
    }
    num = num * dt;
    den *= dt;
    length *= dt;
    if den <= 1e-12 * length {
        debug!("centroid update: identical system (denominator {den:e})");
        return Ok(CentroidDisplacement { delta: Vec2::ZERO, identical_system: true });
    }
    Ok(CentroidDisplacement { delta: num * (1.0 / den), identical_system: false })
}

/// Largest normalized residual of the stationarity equation of each member
/// against `mean` as reference.
pub fn mean_referenced_residual(sys: &ContourSystem, mean: &Contour, m: f64) -> Result<f64> {
    let vm = differentiate(mean)?;
    let mut worst = 0.0f64;
    for (k, c) in sys.contours().iter().enumerate() {
        let v = differentiate(c).map_err(|e| e.in_contour(k))?;
        let res = el_residual_generalized(mean, &vm, c, &v, m).map_err(|e| e.in_contour(k))?;
        worst = worst.max(normalized_residual(&res, mean, c));
    }
    Ok(worst)
}

fn mean_speeds(sys: &ContourSystem) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; sys.point_count()];
    for (k, c) in sys.contours().iter().enumerate() {
        let v = differentiate(c).map_err(|e| e.in_contour(k))?;
        for (a, s) in acc.iter_mut().zip(&v.speed) {
            *a += s;
        }
    }
    let n = sys.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// The basis origin must stay inside every contour and at least this
/// fraction of its initial clearance (the smallest distance from the homogeneous centroid to any
/// contour point) away from every contour.
pub const ORIGIN_CLEARANCE: f64 = 0.5;
const MAX_SHIFT_HALVINGS: usize = 30;

fn clearance(sys: &ContourSystem, mean: Option<&Contour>, delta: Vec2) -> f64 {
    sys.contours()
        .iter()
        .chain(mean)
        .flat_map(|c| c.points().iter())
        .map(|p| (*p - delta).norm())
        .fold(f64::INFINITY, f64::min)
}

/// The origin must stay inside every contour (and the mean) and keep its
/// clearance from them.
fn origin_is_admissible(sys: &ContourSystem, mean: &Contour, delta: Vec2, min_clearance: f64) -> bool {
    clearance(sys, Some(mean), delta) >= min_clearance
        && sys.contours().iter().chain(std::iter::once(mean)).all(|c| winding_number(delta, c.points()) != 0)
}

struct Accepted {
    mean_input: Contour,
    mean_rpsv: RpsvCurve,
    aligned: ContourSystem,
    diffeos: Vec<Diffeomorphism>,
}

/// Alternates optimal reparameterization against the reference member,
/// reconstruction of the mean, and proper-centroid shifts of the basis.
///
/// The basis starts at the homogeneous centroid. The loop stops once the
/// energy changes by less than `outer_energy_tol` (relative) between
/// consecutive iterations. An iteration whose energy exceeds the best so far
/// is not accepted into the result or the trace, but the next iteration
/// continues from it. Running out of iterations is an error only if some
/// iteration was rejected.
/// The centroid update only applies for `m = 1`; other exponents keep the
/// homogeneous centroid.
pub fn solve_double_optimization(sys: &ContourSystem, opts: &MeanOptions) -> Result<MeanResult> {
    opts.validate()?;
    let n = sys.len();
    if n < 2 {
        return Err(Error::TooFewContours { need: 2, got: n });
    }
    if opts.reference >= n {
        return Err(Error::InvalidOptions(format!("reference index {} out of range for {n} contours", opts.reference)));
    }
    let m = opts.exponent;
    let ropts = opts.reparam_options();

    let mut base = sys.clone().centered()?;
    let start_origin = base.origin_offset();
    let min_clearance = ORIGIN_CLEARANCE * clearance(&base, None, Vec2::ZERO);
    let mut diffeos: Option<Vec<Diffeomorphism>> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<Accepted> = None;
    let mut identical = false;
    let mut converged = false;
    let mut last_energy: Option<f64> = None;
    let mut rejected = 0;
    let mut iterations = 0;

    for outer in 1..=opts.outer_max_iters {
        iterations = outer;
        let alignment = optimize_system_from(&base, opts.reference, diffeos.as_deref(), &ropts)?;
        if !alignment.converged() {
            warn!("outer iteration {outer}: reparameterization hit max_iters");
        }
        let aligned = alignment.system;
        let mean_q = rpsv_mean(&aligned, m)?;
        let speeds = mean_speeds(&aligned)?;
        let mean = reconstruct_with_speeds(&mean_q, &opts.reconstruct, Some(&speeds))?;
        let e0 = double_energy(&aligned, &mean, Vec2::ZERO, m)?;

        let mut energy = e0;
        let mut shift = Vec2::ZERO;
        if m == 1.0 {
            let cd = proper_centroid_displacement(&aligned, &mean)?;
            identical = cd.identical_system;
            if !cd.identical_system {
                let plus = double_energy(&aligned, &mean, cd.delta, m)?;
                let minus = double_energy(&aligned, &mean, -cd.delta, m)?;
                let (mut d, mut e) = if plus <= minus { (cd.delta, plus) } else { (-cd.delta, minus) };
                // The energy is a parabola in δd, so any fraction of the
                // minimizer still lowers it. Shorten the shift until the new
                // origin stays clear of every contour.
                let mut halvings = 0;
                while !origin_is_admissible(&aligned, &mean, d, min_clearance) && halvings < MAX_SHIFT_HALVINGS {
                    d = d * 0.5;
                    halvings += 1;
                }
                if halvings > 0 {
                    e = double_energy(&aligned, &mean, d, m)?;
                    debug!("outer {outer}: centroid shift halved {halvings} times to keep the origin clear");
                    if halvings == MAX_SHIFT_HALVINGS {
                        d = Vec2::ZERO;
                        e = e0;
                    }
                }
                debug!(
                    "outer {outer}: δd = ({:e}, {:e}), sign {}, energy {e0:e} -> {e:e}",
                    d.x,
                    d.y,
                    if plus <= minus { "+" } else { "-" }
                );
                if e < e0 {
                    shift = d;
                    energy = e;
                }
            }
        }

        let previous = last_energy.replace(energy);
        if trace.last().is_none_or(|&b| energy <= b) {
            let mean_input = aligned.to_input_frame(&mean);
            let mean_rpsv = to_rpsv(&mean.translated(-shift), m)?;
            let aligned = aligned.shift_origin(shift);
            best = Some(Accepted { mean_input, mean_rpsv, aligned, diffeos: alignment.diffeos.clone() });
            trace.push(energy);
            debug!("outer {outer}: energy {energy:e}");
        } else {
            rejected += 1;
            debug!("outer {outer}: energy {energy:e} above the best so far; not accepted");
        }
        diffeos = Some(alignment.diffeos);
        base = base.shift_origin(shift);

        let done = match previous {
            None => energy == 0.0 || identical,
            Some(prev) => (prev - energy).abs() <= opts.outer_energy_tol * prev,
        };
        if done {
            converged = true;
            break;
        }
    }

    let best = best.expect("the first outer iteration is always accepted");
    if !converged {
        let energy = *trace.last().expect("non-empty trace");
        if rejected > 0 {
            return Err(Error::OuterStagnation { iterations, energy });
        }
        warn!("outer loop still decreasing after {iterations} iterations (energy {energy:e})");
    }
    let origin = best.aligned.origin_offset();
    let aligned = best.aligned.contours().iter().map(|c| best.aligned.to_input_frame(c)).collect();
    Ok(MeanResult {
        mean_contour: best.mean_input,
        mean_rpsv: best.mean_rpsv,
        aligned,
        diffeos: best.diffeos,
        origin,
        centroid_displacement: origin - start_origin,
        energy_trace: trace,
        outer_iterations: iterations,
        converged,
        identical_system: identical,
    })
}
