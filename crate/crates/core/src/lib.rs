//! Geometric diagnostics for Mixture-of-Experts layers.
//!
//! The numeric kernels ([`matrix`], [`linalg`], [`geometry`]) are generic over
//! [`Scalar`] (`f32` or `f64`). The analysis [`pipeline`] and the
//! [`interchange`] formats work in double precision; the aliases below name
//! the concrete types they use.

pub mod error;
pub mod geometry;
pub mod interchange;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod scalar;

pub use error::GeomError;
pub use geometry::{OffDiagStats, PcaMode, PcaResult, Subspace, DEFAULT_COMPONENTS};
pub use pipeline::{GeometryReport, LayerCapture};
pub use scalar::Scalar;

pub type Matrix = matrix::Matrix<f64>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type Subspace64 = geometry::Subspace<f64>;
pub type Subspace32 = geometry::Subspace<f32>;
pub type Pca = geometry::PcaResult<f64>;
pub type Stats = geometry::OffDiagStats<f64>;
