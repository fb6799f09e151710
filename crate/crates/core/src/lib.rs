//! Simultaneous registration and fusion of a panchromatic image with a
//! lower-resolution multispectral image.
//!
//! The fused image minimizes
//! `½‖ψX − M‖² + λ‖∇X − ∇T(D(P))‖₂,₁`
//! jointly over `X` and the warp `T`, where `ψ` is bicubic decimation and the
//! second term couples the band gradients of `X` to those of the warped Pan.

// Negated comparisons double as NaN rejection in parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod registration;
pub mod resample;
pub mod simulate;
pub mod solver;
pub mod tensor;
pub mod vtv;

pub use error::{Result, Shape, SirfError};
pub use registration::{register, RegistrationConfig};
pub use resample::{TransformKind, TransformParams};
pub use solver::{sirf_fuse, FusionResult, SolverConfig};
pub use tensor::MultiBandImage;
