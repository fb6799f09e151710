use std::fmt;

use thiserror::Error;

use crate::solver::ConvergenceTrace;

/// Height, width and band count of a [`MultiBandImage`](crate::MultiBandImage).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, bands: usize) -> Self {
        Self { height, width, bands }
    }

    /// Pixels per band.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.bands
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.bands)
    }
}

#[derive(Debug, Error)]
pub enum SirfError {
    #[error("invalid image shape {shape}: {reason}")]
    InvalidShape { shape: Shape, reason: &'static str },

    #[error("data length {found} does not match shape {shape} ({} values)", shape.len())]
    LengthMismatch { shape: Shape, found: usize },

    #[error("image data contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("image {shape} cannot be resampled by factor {factor}")]
    NotDivisible { shape: Shape, factor: usize },

    #[error("affine transform has a singular linear part (det = {det})")]
    SingularTransform { det: f64 },

    #[error("warped image has no overlap with the reference")]
    NoOverlap,

    #[error("non-finite objective at outer iteration {iteration}")]
    NonFiniteObjective {
        iteration: usize,
        trace: Box<ConvergenceTrace>,
    },

    #[error("metric is undefined: {0}")]
    DegenerateMetric(&'static str),

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = SirfError> = std::result::Result<T, E>;
