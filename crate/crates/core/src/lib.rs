//! Elastic means and interpolation of closed planar contours.
//!
//! Contours are mapped to a representation `q = |r|^m u sqrt(|r'|)` in which
//! reparameterizations act by isometries. The mean of a contour system is
//! found by alternating between optimal pairwise reparameterization and a
//! proper-centroid shift of the basis origin, then mapped back to a contour
//! with a Newton iteration on ray lengths.

pub mod config;
pub mod contour;
pub mod error;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod mean;
pub mod reconstruct;
pub mod reparam;
pub mod svg;

pub use contour::{
    christoffel_divergence, differentiate, distance_sq, homogeneous_centroid, inner_product,
    resample_uniform_arclength, sum_second_central_moments, to_rpsv, Contour, ContourSystem,
    RpsvCurve, VelocityField,
};
pub use error::{Error, Result};
pub use geometry::Vec2;
