//! C interface to `contour_mean`.
//!
//! Every fallible function returns one of the `CM_*` status codes. On
//! failure, `cm_last_error_message` describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use contour_mean::contour::{resample_uniform_arclength, Contour, ContourSystem};
use contour_mean::interp::dissimilarity;
use contour_mean::io::ContourFile;
use contour_mean::mean::{solve_double_optimization, MeanOptions, MeanResult};
use contour_mean::{Error, Vec2};

pub const CM_OK: c_int = 0;
/// A required pointer argument was null.
pub const CM_ERR_NULL: c_int = 1;
/// Malformed contours, options or files.
pub const CM_ERR_INPUT: c_int = 2;
/// The computation failed to converge or hit a singular system.
pub const CM_ERR_NUMERICAL: c_int = 3;
/// An index or buffer size was out of range.
pub const CM_ERR_RANGE: c_int = 4;
/// Internal error.
pub const CM_ERR_PANIC: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (c_int, String)>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CM_OK
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            CM_ERR_PANIC
        }
    }
}

fn lib_err(e: Error) -> (c_int, String) {
    (if e.is_input_error() { CM_ERR_INPUT } else { CM_ERR_NUMERICAL }, e.to_string())
}

fn null(what: &str) -> (c_int, String) {
    (CM_ERR_NULL, format!("{what} is null"))
}

/// An ordered collection of contours.
pub struct CmContourSet {
    contours: Vec<Vec<Vec2>>,
}

/// The outcome of `cm_mean`.
pub struct CmMeanResult {
    result: MeanResult,
}

/// Tunable parameters; obtain defaults from `cm_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CmOptions {
    /// Points per contour after resampling.
    pub points: usize,
    pub exponent: f64,
    pub outer_max_iters: usize,
    pub outer_energy_tol: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub step_clamp: f64,
    pub smoothing: f64,
    pub max_newton_iters: usize,
    pub newton_residual_tol: f64,
}

impl CmOptions {
    fn mean_options(&self) -> MeanOptions {
        let mut o = MeanOptions { exponent: self.exponent, ..MeanOptions::default() };
        o.outer_max_iters = self.outer_max_iters;
        o.outer_energy_tol = self.outer_energy_tol;
        o.reparam.step_size = self.step_size;
        o.reparam.max_iters = self.max_iters;
        o.reparam.residual_tol = self.residual_tol;
        o.reparam.step_clamp = self.step_clamp;
        o.reparam.smoothing = self.smoothing;
        o.reconstruct.max_newton_iters = self.max_newton_iters;
        o.reconstruct.residual_tol = self.newton_residual_tol;
        o
    }

    fn resample(&self, set: &CmContourSet) -> Result<Vec<Contour>, (c_int, String)> {
        if self.points < Contour::MIN_POINTS {
            return Err((CM_ERR_INPUT, format!("points must be at least {}", Contour::MIN_POINTS)));
        }
        set.contours
            .iter()
            .enumerate()
            .map(|(k, c)| resample_uniform_arclength(c, self.points).map_err(|e| lib_err(e.in_contour(k))))
            .collect()
    }
}

#[no_mangle]
pub extern "C" fn cm_options_default() -> CmOptions {
    let o = MeanOptions::default();
    CmOptions {
        points: 256,
        exponent: o.exponent,
        outer_max_iters: o.outer_max_iters,
        outer_energy_tol: o.outer_energy_tol,
        step_size: o.reparam.step_size,
        max_iters: o.reparam.max_iters,
        residual_tol: o.reparam.residual_tol,
        step_clamp: o.reparam.step_clamp,
        smoothing: o.reparam.smoothing,
        max_newton_iters: o.reconstruct.max_newton_iters,
        newton_residual_tol: o.reconstruct.residual_tol,
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn cm_contour_set_new() -> *mut CmContourSet {
    Box::into_raw(Box::new(CmContourSet { contours: Vec::new() }))
}

/// # Safety
/// `set` must be null or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_contour_set_free(set: *mut CmContourSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Reads a `contourset v1` file into a new set stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_contour_set_read(path: *const c_char, out: *mut *mut CmContourSet) -> c_int {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| (CM_ERR_INPUT, "path is not UTF-8".to_string()))?;
        let file = ContourFile::read(path).map_err(lib_err)?;
        let set = CmContourSet { contours: file.contours.into_iter().map(|c| c.points).collect() };
        *out = Box::into_raw(Box::new(set));
        Ok(())
    })
}

/// Appends a contour of `count` points given as interleaved `x, y` pairs.
///
/// # Safety
/// `set` must be a live set and `xy` must hold `2 * count` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_contour_set_push(set: *mut CmContourSet, xy: *const f64, count: usize) -> c_int {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        if xy.is_null() {
            return Err(null("xy"));
        }
        if count < 3 {
            return Err((CM_ERR_INPUT, format!("a contour needs at least 3 points, got {count}")));
        }
        let raw = std::slice::from_raw_parts(xy, 2 * count);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err((CM_ERR_INPUT, "non-finite coordinate".to_string()));
        }
        set.contours.push(raw.chunks_exact(2).map(|p| Vec2::new(p[0], p[1])).collect());
        Ok(())
    })
}

/// Number of contours in `set` (0 for null).
///
/// # Safety
/// `set` must be null or a live set.
#[no_mangle]
pub unsafe extern "C" fn cm_contour_set_len(set: *const CmContourSet) -> usize {
    set.as_ref().map_or(0, |s| s.contours.len())
}

/// Dissimilarity between contours `i` and `j` of `set`.
///
/// # Safety
/// `set` must be a live set, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_dissimilarity(
    set: *const CmContourSet,
    i: usize,
    j: usize,
    options: *const CmOptions,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = set.contours.len();
        if i >= n || j >= n {
            return Err((CM_ERR_RANGE, format!("index out of range for {n} contours")));
        }
        let opts = options.as_ref().copied().unwrap_or_else(|| cm_options_default());
        let contours = opts.resample(set)?;
        let mean = opts.mean_options();
        *out = dissimilarity(&contours[i], &contours[j], opts.exponent, &mean.reparam).map_err(lib_err)?;
        Ok(())
    })
}

/// Mean of every contour in `set`; the result is stored in `*out`.
///
/// # Safety
/// `set` must be a live set, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_mean(
    set: *const CmContourSet,
    options: *const CmOptions,
    out: *mut *mut CmMeanResult,
) -> c_int {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = options.as_ref().copied().unwrap_or_else(|| cm_options_default());
        let sys = ContourSystem::new(opts.resample(set)?).map_err(lib_err)?;
        let result = solve_double_optimization(&sys, &opts.mean_options()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CmMeanResult { result }));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a pointer from `cm_mean` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_free(result: *mut CmMeanResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Points in the mean contour (0 for null).
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_point_count(result: *const CmMeanResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.mean_contour.len())
}

/// Copies the mean contour as interleaved `x, y` pairs into `xy`, which
/// holds `capacity` doubles.
///
/// # Safety
/// `result` must be live and `xy` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_points(result: *const CmMeanResult, xy: *mut f64, capacity: usize) -> c_int {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let points = r.result.mean_contour.points();
        if capacity < 2 * points.len() {
            return Err((CM_ERR_RANGE, format!("buffer holds {capacity} doubles, need {}", 2 * points.len())));
        }
        let out = std::slice::from_raw_parts_mut(xy, 2 * points.len());
        for (dst, p) in out.chunks_exact_mut(2).zip(points) {
            dst[0] = p.x;
            dst[1] = p.y;
        }
        Ok(())
    })
}

/// Final system energy, or NaN for null.
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_energy(result: *const CmMeanResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.result.energy())
}

/// Number of outer iterations performed (0 for null).
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_outer_iterations(result: *const CmMeanResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.outer_iterations)
}

/// 1 if the outer loop converged, 0 otherwise.
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_converged(result: *const CmMeanResult) -> c_int {
    result.as_ref().map_or(0, |r| c_int::from(r.result.converged))
}

/// Writes the total centroid displacement into `xy[0]`, `xy[1]`.
///
/// # Safety
/// `result` must be live and `xy` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_mean_result_centroid_displacement(result: *const CmMeanResult, xy: *mut f64) -> c_int {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let d = r.result.centroid_displacement;
        *xy = d.x;
        *xy.add(1) = d.y;
        Ok(())
    })
}
