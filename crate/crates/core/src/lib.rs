//! Gradient methods with controlled gradient error and growing sample sizes
//! for sum-structured objectives.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod optimizers;
pub mod problems;
pub mod quasinewton;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SyntheticQuadraticF64 = problems::SyntheticQuadratic<f64>;
pub type SyntheticQuadraticF32 = problems::SyntheticQuadratic<f32>;
pub type BinaryLogisticF64 = problems::BinaryLogistic<f64>;
pub type BinaryLogisticF32 = problems::BinaryLogistic<f32>;
pub type MultinomialLogisticF64 = problems::MultinomialLogistic<f64>;
pub type MultinomialLogisticF32 = problems::MultinomialLogistic<f32>;
pub type LeastSquaresF64 = problems::LeastSquares<f64>;
pub type LeastSquaresF32 = problems::LeastSquares<f32>;
pub type TraceF64 = optimizers::Trace<f64>;
pub type TraceF32 = optimizers::Trace<f32>;
pub type LbfgsMemoryF64 = quasinewton::LbfgsMemory<f64>;
pub type LbfgsMemoryF32 = quasinewton::LbfgsMemory<f32>;
