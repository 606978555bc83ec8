//! Interpolation along straight lines in representation space, pairwise
//! dissimilarity, and outlier flagging against the system mean.

use log::debug;
use rayon::prelude::*;

use crate::contour::{differentiate, distance_sq, homogeneous_centroid, to_rpsv, Contour, ContourSystem, RpsvCurve};
use crate::error::{Error, Result};
use crate::mean::{solve_double_optimization, MeanOptions};
use crate::reconstruct::{reconstruct_with_speeds, ReconstructOptions};
use crate::reparam::{optimize_pairwise, PairwiseResult, ReparamOptions};

/// `(1 - τ) q1 + τ q2`.
pub fn linear_path_point(q1: &RpsvCurve, q2: &RpsvCurve, tau: f64) -> Result<RpsvCurve> {
    q1.combine(1.0 - tau, q2, tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpRequest {
    pub from: Contour,
    pub to: Contour,
    /// Sorted, within `[0, 1]`.
    pub taus: Vec<f64>,
    pub exponent: f64,
    pub reparam: ReparamOptions,
    pub reconstruct: ReconstructOptions,
}

impl InterpRequest {
    pub fn new(from: Contour, to: Contour, taus: Vec<f64>) -> Self {
        Self {
            from,
            to,
            taus,
            exponent: 1.0,
            reparam: ReparamOptions::default(),
            reconstruct: ReconstructOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.from.len() != self.to.len() {
            return Err(Error::LengthMismatch(self.from.len(), self.to.len()));
        }
        if let Some(t) = self.taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidOptions(format!("tau {t} outside [0, 1]")));
        }
        if self.taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidOptions("taus must be sorted".into()));
        }
        crate::contour::check_exponent(self.exponent)?;
        self.reparam_options().validate()?;
        self.reconstruct.validate()
    }

    fn reparam_options(&self) -> ReparamOptions {
        ReparamOptions { exponent: self.exponent, ..self.reparam }
    }
}

/// An aligned pair expressed about its homogeneous centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub center: crate::geometry::Vec2,
    pub from: Contour,
    /// `to` at the parameterization that best matches `from`.
    pub to: Contour,
    pub pairwise: PairwiseResult,
}

/// Centres the pair on its homogeneous centroid and reparameterizes `to`
/// against `from`.
pub fn align_pair(from: &Contour, to: &Contour, opts: &ReparamOptions) -> Result<AlignedPair> {
    let center = homogeneous_centroid(&[from.clone(), to.clone()])?;
    let a = from.translated(-center);
    let b = to.translated(-center);
    let pairwise = optimize_pairwise(&a, &b, opts)?;
    Ok(AlignedPair { center, from: a, to: pairwise.contour.clone(), pairwise })
}

/// Frames on the straight line between the two contours, one per `tau`.
///
/// The pair is aligned once and the same reparameterization serves every
/// frame. Frames are reconstructed in parallel.
pub fn interpolate(req: &InterpRequest) -> Result<Vec<Contour>> {
    req.validate()?;
    let m = req.exponent;
    let pair = align_pair(&req.from, &req.to, &req.reparam_options())?;
    interpolate_aligned(&pair, &req.taus, m, &req.reconstruct)
}

/// Frames between the members of an already aligned pair, in the input frame.
pub fn interpolate_aligned(pair: &AlignedPair, taus: &[f64], m: f64, opts: &ReconstructOptions) -> Result<Vec<Contour>> {
    let q1 = to_rpsv(&pair.from, m)?;
    let q2 = to_rpsv(&pair.to, m)?;
    let s1 = differentiate(&pair.from)?.speed;
    let s2 = differentiate(&pair.to)?.speed;
    taus.par_iter()
        .map(|&tau| {
            let q = linear_path_point(&q1, &q2, tau)?;
            let speeds: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| (1.0 - tau) * a + tau * b).collect();
            let frame = reconstruct_with_speeds(&q, opts, Some(&speeds)).map_err(|e| e.in_frame(tau))?;
            Ok(frame.translated(pair.center))
        })
        .collect()
}

/// Densifies an ordered stack of slices with `frames_per_gap` frames between
/// each consecutive pair, aligning each pair on its own.
///
/// Slices are kept as given; with `frames_per_gap = 0` the stack is returned
/// unchanged.
pub fn interpolate_stack(slices: &[Contour], frames_per_gap: usize, req: &StackOptions) -> Result<Vec<Contour>> {
    if slices.len() < 2 {
        return Err(Error::TooFewContours { need: 2, got: slices.len() });
    }
    let taus: Vec<f64> = (1..=frames_per_gap).map(|j| j as f64 / (frames_per_gap + 1) as f64).collect();
    let mut out = Vec::with_capacity(slices.len() + (slices.len() - 1) * frames_per_gap);
    out.push(slices[0].clone());
    for (k, w) in slices.windows(2).enumerate() {
        if !taus.is_empty() {
            let request = InterpRequest {
                from: w[0].clone(),
                to: w[1].clone(),
                taus: taus.clone(),
                exponent: req.exponent,
                reparam: req.reparam,
                reconstruct: req.reconstruct,
            };
            let frames = interpolate(&request).map_err(|e| e.in_contour(k))?;
            debug!("gap {k}: {} frames", frames.len());
            out.extend(frames);
        }
        out.push(w[1].clone());
    }
    Ok(out)
}

/// Options shared by every gap of a stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackOptions {
    pub exponent: f64,
    pub reparam: ReparamOptions,
    pub reconstruct: ReconstructOptions,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self { exponent: 1.0, reparam: ReparamOptions::default(), reconstruct: ReconstructOptions::default() }
    }
}

/// Minimized pair energy of `b` against `a`, about the pair's homogeneous
/// centroid.
pub fn dissimilarity(a: &Contour, b: &Contour, m: f64, opts: &ReparamOptions) -> Result<f64> {
    let opts = ReparamOptions { exponent: m, ..*opts };
    Ok(align_pair(a, b, &opts)?.pairwise.energy())
}

/// Per-member distances `‖q_i - q̄‖` to the system mean, after the double
/// optimization.
pub fn distances_to_mean(sys: &ContourSystem, opts: &MeanOptions) -> Result<Vec<f64>> {
    let result = solve_double_optimization(sys, opts)?;
    result
        .aligned
        .iter()
        .map(|c| {
            let q = to_rpsv(&c.translated(-result.origin), opts.exponent)?;
            Ok(distance_sq(&q, &result.mean_rpsv)?.sqrt())
        })
        .collect()
}

/// Indices whose distance to the mean exceeds `threshold_factor` times the
/// median distance.
pub fn flag_outliers(sys: &ContourSystem, threshold_factor: f64, opts: &MeanOptions) -> Result<Vec<usize>> {
    if sys.len() < 3 {
        return Err(Error::TooFewContours { need: 3, got: sys.len() });
    }
    if threshold_factor.is_nan() || threshold_factor < 0.0 {
        return Err(Error::InvalidOptions(format!("threshold factor {threshold_factor} must be non-negative")));
    }
    let distances = distances_to_mean(sys, opts)?;
    Ok(outliers_from_distances(&distances, threshold_factor))
}

/// The thresholding step of [`flag_outliers`].
pub fn outliers_from_distances(distances: &[f64], threshold_factor: f64) -> Vec<usize> {
    if distances.is_empty() {
        return Vec::new();
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let limit = threshold_factor * median;
    distances.iter().enumerate().filter(|(_, &d)| d > limit).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::knot;
    use crate::geometry::{signed_area, Vec2};
    use crate::reparam::{normalized_rpsv_residual, rpsv_residual};
    use std::f64::consts::PI;

    fn curve(m: usize, f: impl Fn(f64) -> Vec2) -> Contour {
        Contour::new((0..m).map(|i| f(2.0 * PI * knot(i, m))).collect()).unwrap()
    }

    fn circle(m: usize, radius: f64) -> Contour {
        curve(m, |th| Vec2::from_polar(radius, th))
    }

    fn blob(m: usize, phase: f64) -> Contour {
        curve(m, |th| Vec2::from_polar(1.0 + 0.2 * (3.0 * th + phase).cos() + 0.05 * (2.0 * th).sin(), th))
    }

    fn max_error(a: &Contour, b: &Contour) -> f64 {
        a.points().iter().zip(b.points()).map(|(p, q)| p.distance(*q)).fold(0.0, f64::max)
    }

    #[test]
    fn endpoints_and_linearity() {
        let q1 = to_rpsv(&blob(64, 0.0), 1.0).unwrap();
        let q2 = to_rpsv(&circle(64, 1.5), 1.0).unwrap();
        assert_eq!(linear_path_point(&q1, &q2, 0.0).unwrap().vectors(), q1.vectors());
        assert_eq!(linear_path_point(&q1, &q2, 1.0).unwrap().vectors(), q2.vectors());
        let neg = q1.combine(-1.0, &q1, 0.0).unwrap();
        assert!(linear_path_point(&q1, &neg, 0.5).unwrap().norm_sq() == 0.0);

        let d = distance_sq(&q1, &q2).unwrap().sqrt();
        for tau in [0.25, 0.5, 0.75] {
            let q = linear_path_point(&q1, &q2, tau).unwrap();
            let dt = distance_sq(&q1, &q).unwrap().sqrt();
            assert!((dt - tau * d).abs() <= 1e-10 * d, "{tau}");
        }
    }

    #[test]
    fn equal_ends_give_constant_frames() {
        let a = blob(128, 0.3);
        let frames = interpolate(&InterpRequest::new(a.clone(), a.clone(), vec![0.0, 0.3, 0.7, 1.0])).unwrap();
        let diam = crate::geometry::diameter(a.points());
        for f in &frames {
            assert!(max_error(f, &a) <= 1e-6 * diam);
        }
    }

    #[test]
    fn endpoints_reproduce_inputs() {
        let m = 128;
        let a = blob(m, 0.0);
        let b = curve(m, |th| Vec2::new(1.3 * th.cos(), 0.8 * th.sin()) + Vec2::new(0.1, 0.0));
        let req = InterpRequest::new(a.clone(), b.clone(), vec![0.0, 1.0]);
        let frames = interpolate(&req).unwrap();
        let pair = align_pair(&a, &b, &ReparamOptions::default()).unwrap();
        let diam = crate::geometry::diameter(a.points());
        assert!(max_error(&frames[0], &a) <= 1e-6 * diam);
        assert!(max_error(&frames[1], &pair.to.translated(pair.center)) <= 1e-6 * diam);
    }

    #[test]
    fn concentric_circles_stay_circular() {
        let m = 128;
        let frames = interpolate(&InterpRequest::new(circle(m, 1.0), circle(m, 2.0), vec![0.5])).unwrap();
        let radii: Vec<f64> = frames[0].points().iter().map(|p| p.norm()).collect();
        let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = radii.iter().cloned().fold(0.0, f64::max);
        assert!(1.0 - lo / hi <= 1e-4, "{lo} {hi}");
        // |q| = ρ^{3/2} sqrt(2π sinc) on a uniform circle, so the frame's
        // radius solves ρ^{3/2} = (1 + 2^{3/2}) / 2.
        let expected = ((1.0 + 2f64.powf(1.5)) / 2.0).powf(2.0 / 3.0);
        assert!((hi - expected).abs() <= 1e-6 * expected, "{hi} vs {expected}");
    }

    #[test]
    fn path_shares_the_stationarity_equations() {
        let m = 512;
        let a = blob(m, 0.0);
        let b = curve(m, |th| Vec2::new(1.2 * th.cos(), 0.9 * th.sin())).rotated_start(m / 7);
        let opts = ReparamOptions::default();
        let pair = align_pair(&a, &b, &opts).unwrap();
        let q1 = to_rpsv(&pair.from, 1.0).unwrap();
        let q2 = to_rpsv(&pair.to, 1.0).unwrap();
        let w = rpsv_residual(&q1, &q2).unwrap();
        // Rounding enters at the size of the individual products q̇·q.
        let scale = q1.max_norm().max(q2.max_norm()).powi(2) / q1.dt();
        for tau in [0.25, 0.5, 0.75] {
            let q = linear_path_point(&q1, &q2, tau).unwrap();
            let wt = rpsv_residual(&q1, &q).unwrap();
            for (x, y) in wt.iter().zip(&w) {
                assert!((x - tau * y).abs() <= 1e-14 * scale, "{x} vs {}", tau * y);
            }
            let r = normalized_rpsv_residual(&q1, &q).unwrap();
            assert!(r <= 10.0 * opts.residual_tol, "{tau}: {r}");
        }
    }

    #[test]
    fn stack_areas_progress_monotonically() {
        let m = 128;
        let c = circle(m, 1.0);
        let e = curve(m, |th| Vec2::new(1.4 * th.cos(), 0.9 * th.sin()));
        let stack = interpolate_stack(&[c.clone(), e, c], 4, &StackOptions::default()).unwrap();
        assert_eq!(stack.len(), 3 + 2 * 4);
        let areas: Vec<f64> = stack.iter().map(|s| signed_area(s.points())).collect();
        for gap in 0..2 {
            let seg = &areas[gap * 5..=gap * 5 + 5];
            let rising = seg[5] > seg[0];
            let span = (seg[5] - seg[0]).abs();
            for w in seg.windows(2) {
                let step = if rising { w[1] - w[0] } else { w[0] - w[1] };
                assert!(step >= -0.02 * span.max(seg[0].abs() * 1e-3), "{seg:?}");
            }
        }
    }

    #[test]
    fn empty_gaps_echo_the_stack() {
        let s = vec![circle(32, 1.0), blob(32, 0.2)];
        assert_eq!(interpolate_stack(&s, 0, &StackOptions::default()).unwrap(), s);
        assert!(interpolate_stack(&s[..1], 2, &StackOptions::default()).is_err());
    }

    #[test]
    fn dissimilarity_properties() {
        let m = 256;
        let a = blob(m, 0.0);
        let opts = ReparamOptions::default();
        let qa = to_rpsv(&a, 1.0).unwrap();
        assert!(dissimilarity(&a, &a, 1.0, &opts).unwrap() <= 1e-8 * qa.norm_sq());

        let b = curve(m, |th| Vec2::new(1.2 * th.cos(), 0.85 * th.sin())).rotated_start(40);
        let ab = dissimilarity(&a, &b, 1.0, &opts).unwrap();
        let ba = dissimilarity(&b, &a, 1.0, &opts).unwrap();
        assert!((ab - ba).abs() <= 0.02 * ab.max(ba), "{ab} vs {ba}");
    }

    #[test]
    fn concentric_circle_dissimilarity_matches_quadrature() {
        let m = 256;
        let d = dissimilarity(&circle(m, 1.0), &circle(m, 2.0), 1.0, &ReparamOptions::default()).unwrap();
        // Both circles keep their uniform parameterization; integrate
        // |(ρ1 sqrt(s1) - ρ2 sqrt(s2))|² with the central-difference speeds.
        let dt = 1.0 / m as f64;
        let s = |r: f64| r * (2.0 * PI * dt).sin() / dt;
        let per_point = (1.0 * s(1.0).sqrt() - 2.0 * s(2.0).sqrt()).powi(2);
        let expected: f64 = (0..m).map(|_| per_point * dt).sum();
        assert!((d - expected).abs() <= 1e-10 * expected, "{d} vs {expected}");
    }

    #[test]
    fn median_thresholding() {
        assert!(outliers_from_distances(&[1.0, 1.0, 1.0], 3.0).is_empty());
        assert_eq!(outliers_from_distances(&[1.0, 1.1, 0.9, 1.0, 5.0], 3.0), vec![4]);
        assert!(outliers_from_distances(&[1.0, 1.1, 0.9, 1.0, 5.0], f64::INFINITY).is_empty());
        assert_eq!(outliers_from_distances(&[1.0, 2.0, 3.0, 10.0], 2.0), vec![3]);
    }

    #[test]
    fn flags_the_displaced_member() {
        let m = 128;
        let mut contours: Vec<Contour> = (0..5).map(|k| circle(m, 1.0 + 0.01 * k as f64)).collect();
        contours.push(circle(m, 1.0).translated(Vec2::new(3.0, 0.0)));
        let sys = ContourSystem::new(contours.clone()).unwrap();
        assert_eq!(flag_outliers(&sys, 3.0, &MeanOptions::default()).unwrap(), vec![5]);
        assert!(flag_outliers(&sys, f64::INFINITY, &MeanOptions::default()).unwrap().is_empty());

        let same = ContourSystem::new(vec![blob(m, 0.0); 4]).unwrap();
        assert!(flag_outliers(&same, 3.0, &MeanOptions::default()).unwrap().is_empty());
        let two = ContourSystem::new(contours[..2].to_vec()).unwrap();
        assert!(matches!(flag_outliers(&two, 3.0, &MeanOptions::default()), Err(Error::TooFewContours { .. })));
    }
}
