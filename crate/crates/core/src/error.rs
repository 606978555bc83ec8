use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate contour: {0}")]
    DegenerateContour(&'static str),

    #[error("contour needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },

    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),

    #[error("stationary point at index {0}")]
    StationaryPoint(usize),

    #[error("singular exponent: m = -1/2 admits no reconstruction")]
    SingularExponent,

    #[error("origin on contour at index {0}")]
    OriginOnContour(usize),

    #[error("ray through origin at index {0}")]
    RayThroughOrigin(usize),

    #[error("point count mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("exponent mismatch: {0} vs {1}")]
    ExponentMismatch(f64, f64),

    #[error("need at least {need} contours, got {got}")]
    TooFewContours { need: usize, got: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("no descent possible (normalized residual {residual:e})")]
    NoDescent { residual: f64 },

    #[error("singular reconstruction system")]
    SingularSystem,

    #[error("reconstruction did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("outer stagnation: energy {energy:e} still changing after {iterations} outer iterations")]
    OuterStagnation { iterations: usize, energy: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Io(String),

    #[error("contour {index}: {source}")]
    InContour { index: usize, source: Box<Error> },

    #[error("frame tau = {tau}: {source}")]
    InFrame { tau: f64, source: Box<Error> },
}

impl Error {
    pub fn in_contour(self, index: usize) -> Self {
        Error::InContour { index, source: Box::new(self) }
    }

    pub fn in_frame(self, tau: f64) -> Self {
        Error::InFrame { tau, source: Box::new(self) }
    }

    /// True for errors caused by the caller's data or options rather than by
    /// a numerical failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::DegenerateContour(_)
            | Error::TooFewPoints { .. }
            | Error::NonFinite(_)
            | Error::LengthMismatch(..)
            | Error::ExponentMismatch(..)
            | Error::TooFewContours { .. }
            | Error::InvalidOptions(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::SingularExponent => true,
            Error::InContour { source, .. } | Error::InFrame { source, .. } => {
                source.is_input_error()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
